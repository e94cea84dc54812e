//! PubChem compound-image download client.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub const PUBCHEM_BASE_URL: &str = "https://pubchem.ncbi.nlm.nih.gov/rest/pug";
pub const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportError {
    Timeout(String),
    Other(String),
}

/// Minimal blocking HTTP GET, so the client can run against a mock.
pub trait Transport {
    fn get(&self, url: &str) -> std::result::Result<HttpResponse, TransportError>;
}

#[derive(Clone, Debug)]
pub struct FetchConfig {
    pub base_url: String,
    pub image_size: String,
    pub max_requests_per_second: f64,
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            base_url: PUBCHEM_BASE_URL.into(),
            image_size: "500x500".into(),
            max_requests_per_second: 5.0,
            retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

pub fn compound_png_url(base_url: &str, cid: &str, image_size: &str) -> String {
    format!(
        "{}/compound/cid/{cid}/PNG?image_size={image_size}",
        base_url.trim_end_matches('/')
    )
}

fn validate_cid(cid: &str) -> Result<()> {
    if cid.is_empty() || !cid.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Config(format!("CID {cid:?} is not numeric")));
    }
    Ok(())
}

/// Rate-limited fetcher. Requests (including retries) start at least
/// `1 / max_requests_per_second` apart.
pub struct Fetcher<T> {
    transport: T,
    config: FetchConfig,
    last_request: Option<Instant>,
    requests: usize,
}

impl<T: Transport> Fetcher<T> {
    pub fn new(transport: T, config: FetchConfig) -> Self {
        Self {
            transport,
            config,
            last_request: None,
            requests: 0,
        }
    }

    /// Number of HTTP requests issued so far.
    pub fn requests(&self) -> usize {
        self.requests
    }

    fn throttle(&mut self) {
        if self.config.max_requests_per_second <= 0.0 {
            return;
        }
        let gap = Duration::from_secs_f64(1.0 / self.config.max_requests_per_second);
        if let Some(last) = self.last_request {
            let elapsed = last.elapsed();
            if elapsed < gap {
                std::thread::sleep(gap - elapsed);
            }
        }
        self.last_request = Some(Instant::now());
    }

    fn get_with_retry(&mut self, cid: &str, url: &str) -> Result<Vec<u8>> {
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            self.throttle();
            self.requests += 1;
            let failure = match self.transport.get(url) {
                Ok(r) if r.status == 200 => return Ok(r.body),
                Ok(r) if r.status == 404 => return Err(Error::UnknownCid(cid.to_owned())),
                Ok(r) if r.status >= 500 => format!("HTTP {} from {url}", r.status),
                Ok(r) => return Err(Error::Fetch(format!("HTTP {} from {url}", r.status))),
                Err(TransportError::Timeout(m)) => format!("timeout on {url}: {m}"),
                Err(TransportError::Other(m)) => return Err(Error::Fetch(format!("{url}: {m}"))),
            };
            if attempt >= self.config.retries {
                return Err(Error::Fetch(format!(
                    "{failure} (gave up after {} retries)",
                    self.config.retries
                )));
            }
            log::warn!("{failure}; retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff *= 2;
            attempt += 1;
        }
    }

    /// Downloads `<out_dir>/<cid>.png` unless it already exists.
    pub fn fetch_png(&mut self, cid: &str, out_dir: &Path) -> Result<PathBuf> {
        validate_cid(cid)?;
        self.fetch_to(cid, &out_dir.join(format!("{cid}.png")))
    }

    /// Downloads the image for `cid` to `path` unless it already exists.
    pub fn fetch_to(&mut self, cid: &str, path: &Path) -> Result<PathBuf> {
        validate_cid(cid)?;
        let path = path.to_path_buf();
        if path.exists() {
            return Ok(path);
        }
        let url = compound_png_url(&self.config.base_url, cid, &self.config.image_size);
        let body = self.get_with_retry(cid, &url)?;
        if !body.starts_with(&PNG_MAGIC) {
            return Err(Error::Fetch(format!("{url} did not return a PNG")));
        }
        write_atomic(&path, &body)?;
        Ok(path)
    }
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(feature = "cli")]
mod http {
    use super::{HttpResponse, Transport, TransportError};
    use std::time::Duration;

    /// Blocking HTTPS transport.
    pub struct UreqTransport {
        agent: ureq::Agent,
    }

    impl UreqTransport {
        pub fn new(timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(timeout))
                .build()
                .into();
            Self { agent }
        }
    }

    impl Default for UreqTransport {
        fn default() -> Self {
            Self::new(Duration::from_secs(30))
        }
    }

    impl Transport for UreqTransport {
        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            let mut resp = self.agent.get(url).call().map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout(e.to_string()),
                ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
                    TransportError::Timeout(e.to_string())
                }
                other => TransportError::Other(other.to_string()),
            })?;
            let status = resp.status().as_u16();
            let body = resp
                .body_mut()
                .with_config()
                .limit(64 * 1024 * 1024)
                .read_to_vec()
                .map_err(|e| TransportError::Other(e.to_string()))?;
            Ok(HttpResponse { status, body })
        }
    }
}

#[cfg(feature = "cli")]
pub use http::UreqTransport;

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    struct Scripted {
        replies: RefCell<Vec<std::result::Result<HttpResponse, TransportError>>>,
        urls: RefCell<Vec<String>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<std::result::Result<HttpResponse, TransportError>>) -> Self {
            replies.reverse();
            Self {
                replies: RefCell::new(replies),
                urls: RefCell::new(Vec::new()),
            }
        }
    }

    impl Transport for &Scripted {
        fn get(&self, url: &str) -> std::result::Result<HttpResponse, TransportError> {
            self.urls.borrow_mut().push(url.to_owned());
            self.replies.borrow_mut().pop().expect("unexpected request")
        }
    }

    fn png() -> HttpResponse {
        let mut body = PNG_MAGIC.to_vec();
        body.extend_from_slice(b"rest");
        HttpResponse { status: 200, body }
    }

    fn status(code: u16) -> std::result::Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            body: Vec::new(),
        })
    }

    fn fast() -> FetchConfig {
        FetchConfig {
            base_url: "http://mock".into(),
            max_requests_per_second: 0.0,
            initial_backoff: Duration::from_millis(1),
            ..FetchConfig::default()
        }
    }

    #[test]
    fn url_layout() {
        assert_eq!(
            compound_png_url(PUBCHEM_BASE_URL, "2244", "500x500"),
            "https://pubchem.ncbi.nlm.nih.gov/rest/pug/compound/cid/2244/PNG?image_size=500x500"
        );
    }

    #[test]
    fn non_numeric_cid_makes_no_request() {
        let t = Scripted::new(vec![]);
        let dir = tempfile::tempdir().unwrap();
        let mut f = Fetcher::new(&t, fast());
        assert_eq!(f.fetch_png("abc", dir.path()).unwrap_err().kind(), "config");
        assert_eq!(f.requests(), 0);
    }

    #[test]
    fn existing_file_is_skipped() {
        let t = Scripted::new(vec![]);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("7.png"), b"x").unwrap();
        let mut f = Fetcher::new(&t, fast());
        assert_eq!(
            f.fetch_png("7", dir.path()).unwrap(),
            dir.path().join("7.png")
        );
        assert_eq!(f.requests(), 0);
    }

    #[test]
    fn not_found_is_unknown_cid() {
        let t = Scripted::new(vec![status(404)]);
        let dir = tempfile::tempdir().unwrap();
        let err = Fetcher::new(&t, fast())
            .fetch_png("9", dir.path())
            .unwrap_err();
        assert_eq!(err.to_string(), "unknown CID 9");
    }

    #[test]
    fn server_errors_retry_then_succeed() {
        let t = Scripted::new(vec![
            status(503),
            Err(TransportError::Timeout("slow".into())),
            Ok(png()),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let mut f = Fetcher::new(&t, fast());
        let path = f.fetch_png("5", dir.path()).unwrap();
        assert_eq!(f.requests(), 3);
        assert!(std::fs::read(path).unwrap().starts_with(&PNG_MAGIC));
    }

    #[test]
    fn retries_are_bounded() {
        let t = Scripted::new(vec![status(500), status(500), status(500), status(500)]);
        let dir = tempfile::tempdir().unwrap();
        let mut f = Fetcher::new(&t, fast());
        assert_eq!(f.fetch_png("5", dir.path()).unwrap_err().kind(), "fetch");
        assert_eq!(f.requests(), 4);
        assert!(!dir.path().join("5.png").exists());
    }

    #[test]
    fn non_png_body_rejected() {
        let t = Scripted::new(vec![Ok(HttpResponse {
            status: 200,
            body: b"<html>".to_vec(),
        })]);
        let dir = tempfile::tempdir().unwrap();
        assert!(Fetcher::new(&t, fast()).fetch_png("5", dir.path()).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn throttle_spaces_requests() {
        let k = 4;
        let t = Scripted::new((0..k).map(|_| Ok(png())).collect());
        let dir = tempfile::tempdir().unwrap();
        let cfg = FetchConfig {
            max_requests_per_second: 5.0,
            ..fast()
        };
        let mut f = Fetcher::new(&t, cfg);
        let start = Instant::now();
        for cid in 0..k {
            f.fetch_png(&cid.to_string(), dir.path()).unwrap();
        }
        assert_eq!(f.requests(), k);
        assert!(start.elapsed() >= Duration::from_secs_f64((k - 1) as f64 / 5.0));
        assert!(t.urls.borrow()[0].ends_with("/compound/cid/0/PNG?image_size=500x500"));
    }
}
