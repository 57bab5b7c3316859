use std::path::PathBuf;
use std::process::ExitCode;

use adlab::commands::output_root;
use adlab::{cmd_extract, cmd_gen_corpus, cmd_report, cmd_run, AppError, ExtractArgs, Scenario};
use clap::{Parser, Subcommand};

/// Pay-per-click sandbox: generate corpora, run fraud scenarios, extract ad
/// links and report detection results.
#[derive(Parser, Debug)]
#[command(name = "adlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a publisher corpus: corpus.json plus every page under pages/.
    GenCorpus {
        #[arg(long, default_value_t = 10)]
        n_sites: u32,
        #[arg(long, default_value_t = 3)]
        campaigns_per_site: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory [default: $ADLAB_OUT/corpus-seed<SEED>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a scenario, run the filters and write a run directory.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: $ADLAB_OUT/<name>-seed<SEED>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the ad links of one page of a generated corpus.
    Extract {
        /// Page URL, e.g. http://www.site000.test/index.html
        target_url: String,
        /// Corpus directory written by gen-corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Origin to write into the ad-frame URL; without it the URL keeps
        /// the extraction page's origin and the service refuses it.
        #[arg(long)]
        rewrite_domain: Option<String>,
        /// Page the extraction program runs from [default: the built-in exploit page URL]
        #[arg(long)]
        exec_page: Option<String>,
        /// Write the extraction record as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Serve the corpus over local HTTP and extract through it.
        #[arg(long)]
        http: bool,
    },
    /// Print the detection report of a run directory.
    Report {
        run_dir: PathBuf,
        /// Add a side-by-side comparison with another run directory.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Print report.json instead of the table.
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::GenCorpus {
            n_sites,
            campaigns_per_site,
            seed,
            out,
        } => {
            let dir = out.unwrap_or_else(|| output_root().join(format!("corpus-seed{seed}")));
            let c = cmd_gen_corpus(n_sites, campaigns_per_site, seed, &dir)?;
            println!(
                "{} sites, {} campaigns -> {}",
                c.sites.len(),
                c.campaigns.len(),
                dir.display()
            );
        }
        Command::Run { scenario, seed, out } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = seed {
                s = s.with_seed(seed);
            }
            let dir = out.unwrap_or_else(|| output_root().join(format!("{}-seed{}", s.name, s.seed)));
            let m = cmd_run(&s, &dir)?;
            println!(
                "{} seed {}: {} events, {} clicks in {:.1} s -> {}",
                m.scenario,
                m.seed,
                m.events,
                m.clicks,
                m.wall_clock_secs,
                dir.display()
            );
            print!(
                "{}",
                std::fs::read_to_string(dir.join(adlab::formats::REPORT_TXT)).unwrap_or_default()
            );
        }
        Command::Extract {
            target_url,
            corpus,
            rewrite_domain,
            exec_page,
            out,
            http,
        } => {
            let rec = cmd_extract(&ExtractArgs {
                corpus_dir: corpus,
                target_url,
                rewrite_domain,
                exec_page,
                out_file: out,
                http,
            })?;
            for b in &rec.blocks {
                for l in &b.links {
                    println!("{}", l.url);
                }
            }
        }
        Command::Report { run_dir, compare, json } => {
            let (report, text) = cmd_report(&run_dir, compare.as_deref())?;
            if json {
                print!("{}", report.to_json());
            } else {
                print!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("adlab: {e}");
            if let AppError::Extraction(f) = &e {
                for r in &f.trace {
                    eprintln!("  step {} ({}): {}", r.step, r.step.describe(), r.status.as_str());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
