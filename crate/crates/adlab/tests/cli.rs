use std::path::Path;
use std::process::{Command, Output};

use adlab::commands::{CorpusFile, ExtractionRecord, PAGES_DIR};
use adlab_core::extractor::detect_ad_block;

fn adlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adlab")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn gen_corpus(dir: &Path, seed: &str) -> CorpusFile {
    let o = adlab(&[
        "gen-corpus",
        "--n-sites",
        "6",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    CorpusFile::load(dir).unwrap()
}

fn first_page(c: &CorpusFile, num_ads: u32) -> String {
    let s = c
        .sites
        .iter()
        .find(|s| s.ad_config.max_num_ads == num_ads)
        .expect("site with that block size");
    format!("{}{}", s.base_url, s.pages[0])
}

fn extract(corpus: &Path, url: &str, extra: &[&str]) -> (Output, ExtractionRecord) {
    let out = corpus.join(format!(
        "extract-{}.json",
        extra.join("").replace(['-', '.', ':', '/'], "")
    ));
    let mut args = vec![
        "extract",
        url,
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = adlab(&args);
    let rec = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    (o, rec)
}

#[test]
fn gen_corpus_is_reproducible_and_pages_carry_their_block() {
    let tmp = tempfile::tempdir().unwrap();
    let a = gen_corpus(&tmp.path().join("a"), "7");
    gen_corpus(&tmp.path().join("b"), "7");
    let c = gen_corpus(&tmp.path().join("c"), "8");
    assert_eq!(
        std::fs::read(tmp.path().join("a/corpus.json")).unwrap(),
        std::fs::read(tmp.path().join("b/corpus.json")).unwrap()
    );
    assert_ne!(a, c);
    for s in &a.sites {
        for p in &s.pages {
            let path = tmp
                .path()
                .join("a")
                .join(PAGES_DIR)
                .join(s.site_id.as_str())
                .join(p.trim_start_matches('/'));
            let html = std::fs::read_to_string(&path).unwrap();
            assert_eq!(
                html,
                std::fs::read_to_string(
                    tmp.path()
                        .join("b")
                        .join(path.strip_prefix(tmp.path().join("a")).unwrap())
                )
                .unwrap()
            );
            assert_eq!(detect_ad_block(&html), vec![s.ad_config.clone()], "{}", path.display());
        }
    }
}

#[test]
fn extract_finds_every_link_in_process_and_over_http() {
    let tmp = tempfile::tempdir().unwrap();
    let c = gen_corpus(tmp.path(), "1");
    let n = c.sites.iter().map(|s| s.ad_config.max_num_ads).max().unwrap();
    let url = first_page(&c, n);
    let domain = c
        .sites
        .iter()
        .find(|s| url.starts_with(&s.base_url))
        .unwrap()
        .base_url
        .clone();
    let (o, local) = extract(tmp.path(), &url, &["--rewrite-domain", &domain]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(local.link_count(), n as usize);
    assert!(local.blocks[0].links.iter().all(|l| l.verified));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), n as usize);

    let (o, remote) = extract(tmp.path(), &url, &["--rewrite-domain", &domain, "--http"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(remote.blocks, local.blocks);
}

#[test]
fn unrewritten_frame_fails_at_the_origin_step() {
    let tmp = tempfile::tempdir().unwrap();
    let c = gen_corpus(tmp.path(), "1");
    let url = first_page(&c, c.sites[0].ad_config.max_num_ads);
    for extra in [&[][..], &["--http"][..]] {
        let (o, rec) = extract(tmp.path(), &url, extra);
        assert_eq!(code(&o), 18, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(rec.exit_code, 18);
        assert_eq!(rec.failed_step.as_deref(), Some("i"));
        assert!(String::from_utf8_lossy(&o.stderr).contains("origin"));
        assert_eq!(rec.link_count(), 0);
    }
}

#[test]
fn page_without_ad_block_exits_with_the_detection_step_code() {
    let tmp = tempfile::tempdir().unwrap();
    gen_corpus(tmp.path(), "1");
    let (o, rec) = extract(
        tmp.path(),
        "http://googleads.test/pagead/show_ads.js",
        &["--rewrite-domain", "http://www.site000.test"],
    );
    assert_eq!(code(&o), 11);
    assert_eq!(rec.failed_step.as_deref(), Some("b"));
    assert!(rec.blocks.is_empty());
}

#[test]
fn unknown_page_fails_at_the_fetch_step() {
    let tmp = tempfile::tempdir().unwrap();
    gen_corpus(tmp.path(), "1");
    let (o, rec) = extract(
        tmp.path(),
        "http://www.nowhere.test/",
        &["--rewrite-domain", "http://www.nowhere.test"],
    );
    assert_eq!(code(&o), 10);
    assert_eq!(rec.failed_step.as_deref(), Some("a"));
}

#[test]
fn default_output_goes_under_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_adlab"))
        .args(["gen-corpus", "--n-sites", "2", "--seed", "3"])
        .env("ADLAB_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("corpus-seed3/corpus.json").is_file());
}

#[test]
fn bad_scenario_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\nseed = 1\nduration_hours = \"long\"\n").unwrap();
    let o = adlab(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_inputs_and_bad_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adlab(&["report", tmp.path().join("absent").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let o = adlab(&["run"]);
    assert_eq!(code(&o), 2);
    let o = adlab(&[
        "extract",
        "http://www.site000.test/",
        "--corpus",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
}
