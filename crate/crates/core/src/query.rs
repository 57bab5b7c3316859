//! URL and query-string helpers: percent-encoding sets, a minimal absolute-URL
//! splitter, host comparison and the canonical signing form of a query.

use alloc::borrow::Cow;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;

/// Characters escaped by a browser's `encodeURIComponent`.
pub const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'!')
    .remove(b'~')
    .remove(b'*')
    .remove(b'\'')
    .remove(b'(')
    .remove(b')');

/// Parent-origin style: the colon is escaped, slashes are kept (`http%3A//host`).
pub const ORIGIN: &AsciiSet = &COMPONENT.remove(b'/');

/// Landing-URL style used for `adurl`: scheme and path separators stay readable,
/// the landing page's own query delimiters are escaped.
pub const LANDING: &AsciiSet = &COMPONENT.remove(b'/').remove(b':');

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("duplicate query key `{0}`")]
    DuplicateKey(String),
    #[error("empty query key")]
    EmptyKey,
}

pub fn encode(value: &str, set: &'static AsciiSet) -> String {
    utf8_percent_encode(value, set).to_string()
}

/// Percent-decodes `value`; `None` if the result is not UTF-8.
pub fn decode(value: &str) -> Option<String> {
    percent_decode_str(value).decode_utf8().ok().map(Cow::into_owned)
}

/// Splits a raw query into `(key, value)` pairs without decoding.
/// Empty segments are skipped; a segment without `=` has an empty value.
pub fn raw_pairs(query: &str) -> impl Iterator<Item = (&str, &str)> {
    query
        .split('&')
        .filter(|seg| !seg.is_empty())
        .map(|seg| seg.split_once('=').unwrap_or((seg, "")))
}

/// Canonical signing form: pairs sorted by key, rendered `k=v` and joined by `&`.
/// Values are taken verbatim, so they must already be percent-encoded.
pub fn canonicalize_query<K, V>(params: &[(K, V)]) -> Result<String, QueryError>
where
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut sorted: Vec<(&str, &str)> = params.iter().map(|(k, v)| (k.as_ref(), v.as_ref())).collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = String::new();
    for (i, (k, v)) in sorted.iter().enumerate() {
        if k.is_empty() {
            return Err(QueryError::EmptyKey);
        }
        if i > 0 {
            if sorted[i - 1].0 == *k {
                return Err(QueryError::DuplicateKey(k.to_string()));
            }
            out.push('&');
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
    }
    Ok(out)
}

/// Pieces of an absolute `scheme://authority/path?query` URL. Fragments are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UrlParts<'a> {
    pub scheme: &'a str,
    pub authority: &'a str,
    pub path: &'a str,
    pub query: Option<&'a str>,
}

pub fn split_url(url: &str) -> Option<UrlParts<'_>> {
    let url = url.split('#').next().unwrap_or(url);
    let (scheme, rest) = url.split_once("://")?;
    if scheme.is_empty() || !scheme.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'+') {
        return None;
    }
    let auth_end = rest.find(['/', '?']).unwrap_or(rest.len());
    let authority = &rest[..auth_end];
    if authority.is_empty() {
        return None;
    }
    let tail = &rest[auth_end..];
    let (path, query) = match tail.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (tail, None),
    };
    let path = if path.is_empty() { "/" } else { path };
    Some(UrlParts {
        scheme,
        authority,
        path,
        query,
    })
}

pub fn is_absolute(url: &str) -> bool {
    split_url(url).is_some()
}

/// Lower-cased host of an absolute URL, without user info or port.
pub fn host(url: &str) -> Option<String> {
    let parts = split_url(url)?;
    let auth = parts.authority.rsplit('@').next().unwrap_or(parts.authority);
    let host = match auth.rsplit_once(':') {
        Some((h, port)) if port.bytes().all(|b| b.is_ascii_digit()) => h,
        _ => auth,
    };
    Some(host.to_ascii_lowercase())
}

/// Host used for origin-coherence checks: [`host`] with a leading `www.` removed.
pub fn registrable_host(url: &str) -> Option<String> {
    let h = host(url)?;
    Some(match h.strip_prefix("www.") {
        Some(rest) => rest.to_string(),
        None => h,
    })
}

/// `scheme://authority` of an absolute URL.
pub fn origin(url: &str) -> Option<String> {
    let p = split_url(url)?;
    let mut s = String::with_capacity(p.scheme.len() + 3 + p.authority.len());
    s.push_str(p.scheme);
    s.push_str("://");
    s.push_str(p.authority);
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn canonical_form_sorts_keys() {
        assert_eq!(canonicalize_query(&[("b", "2"), ("a", "1")]).unwrap(), "a=1&b=2");
    }

    #[test]
    fn canonical_form_of_nothing_is_empty() {
        let empty: [(&str, &str); 0] = [];
        assert_eq!(canonicalize_query(&empty).unwrap(), "");
    }

    #[test]
    fn canonical_form_keeps_encoding() {
        assert_eq!(
            canonicalize_query(&[("url", "http%3A%2F%2Fx")]).unwrap(),
            "url=http%3A%2F%2Fx"
        );
    }

    #[test]
    fn canonical_form_rejects_duplicates() {
        assert_eq!(
            canonicalize_query(&[("a", "1"), ("b", "2"), ("a", "3")]),
            Err(QueryError::DuplicateKey("a".into()))
        );
        assert_eq!(canonicalize_query(&[("", "1")]), Err(QueryError::EmptyKey));
    }

    #[test]
    fn encode_sets_match_browser_behaviour() {
        assert_eq!(encode("http://localhost/x", COMPONENT), "http%3A%2F%2Flocalhost%2Fx");
        assert_eq!(encode("http://localhost", ORIGIN), "http%3A//localhost");
        assert_eq!(
            encode("http://a.com/r.php?f=1&b=2", LANDING),
            "http://a.com/r.php%3Ff%3D1%26b%3D2"
        );
    }

    #[test]
    fn url_splitting() {
        let p = split_url("http://User@Example.com:8080/a/b?x=1#frag").unwrap();
        assert_eq!(p.scheme, "http");
        assert_eq!(p.path, "/a/b");
        assert_eq!(p.query, Some("x=1"));
        assert_eq!(host("http://User@Example.com:8080/a").unwrap(), "example.com");
        assert_eq!(registrable_host("http://www.anuncios.com/").unwrap(), "anuncios.com");
        assert_eq!(origin("http://localhost/vigilante/x.php").unwrap(), "http://localhost");
        assert_eq!(split_url("http://h").unwrap().path, "/");
        assert!(split_url("/relative").is_none());
    }

    #[test]
    fn raw_pairs_keep_bytes() {
        let v: Vec<_> = raw_pairs("a=1&&b&c=x%20y").collect();
        assert_eq!(v, vec![("a", "1"), ("b", ""), ("c", "x%20y")]);
    }

    proptest! {
        #[test]
        fn canonical_form_is_order_insensitive(
            mut pairs in proptest::collection::btree_map("[a-z]{1,6}", "[a-zA-Z0-9%]{0,8}", 0..8)
                .prop_map(|m| m.into_iter().collect::<Vec<_>>()),
            seed in any::<u64>(),
        ) {
            let sorted = canonicalize_query(&pairs).unwrap();
            // deterministic shuffle
            let n = pairs.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                pairs.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(&canonicalize_query(&pairs).unwrap(), &sorted);
            // idempotent: re-canonicalising the parsed output changes nothing
            let reparsed: Vec<(&str, &str)> = raw_pairs(&sorted).collect();
            prop_assert_eq!(canonicalize_query(&reparsed).unwrap(), sorted.clone());
        }

        #[test]
        fn decode_inverts_encode(s in "\\PC{0,24}") {
            prop_assert_eq!(decode(&encode(&s, COMPONENT)).unwrap(), s.clone());
            prop_assert_eq!(decode(&encode(&s, LANDING)).unwrap(), s);
        }
    }
}
