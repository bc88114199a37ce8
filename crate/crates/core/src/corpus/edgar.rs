//! Fetching 10-K filings from the public EDGAR archive, with an on-disk cache.
//!
//! Fetching is disabled unless a user-agent string is configured; the archive
//! requires every client to identify itself. Requests are throttled
//! process-wide to at most ten per second, and the cache stores the response
//! body byte for byte at `<cache_dir>/<accession>.txt`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use thiserror::Error;

pub const EDGAR_ARCHIVE: &str = "https://www.sec.gov/Archives/edgar/data";
pub const USER_AGENT_ENV: &str = "CLIMASENT_USER_AGENT";
pub const CACHE_DIR_ENV: &str = "CLIMASENT_CACHE_DIR";

const MIN_INTERVAL: Duration = Duration::from_millis(100);
const MAX_BODY: u64 = 1 << 30;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("malformed accession `{0}` (expected NNNNNNNNNN-NN-NNNNNN)")]
    MalformedAccession(String),
    #[error("EDGAR fetching is disabled: no user agent configured (set {USER_AGENT_ENV})")]
    Disabled,
    #[error("filing not found: {0}")]
    NotFound(String),
    #[error("transient failure fetching {url}: {reason}")]
    Transient { url: String, reason: String },
    #[error("cache write failed for {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FetchError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, FetchError::Transient { .. })
    }
}

/// An EDGAR accession number, `0000320193-18-000145` style: the filer CIK
/// (10 digits), the year (2 digits) and a sequence number (6 digits).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Accession {
    text: String,
    cik: u64,
}

impl Accession {
    pub fn cik(&self) -> u64 {
        self.cik
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn url(&self, base: &str) -> String {
        format!("{}/{}/{}.txt", base.trim_end_matches('/'), self.cik, self.text)
    }
}

impl FromStr for Accession {
    type Err = FetchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FetchError::MalformedAccession(s.to_owned());
        let parts: Vec<&str> = s.split('-').collect();
        let widths = [10, 2, 6];
        if parts.len() != 3
            || parts
                .iter()
                .zip(widths)
                .any(|(p, w)| p.len() != w || !p.bytes().all(|b| b.is_ascii_digit()))
        {
            return Err(bad());
        }
        let cik = parts[0].parse().map_err(|_| bad())?;
        Ok(Self {
            text: s.to_owned(),
            cik,
        })
    }
}

impl fmt::Display for Accession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug)]
pub enum HttpError {
    Status(u16),
    Network(String),
}

/// Minimal blocking GET used by the fetcher; swapped out in tests.
pub trait HttpGet {
    fn get(&self, url: &str, user_agent: &str) -> Result<Vec<u8>, HttpError>;
}

pub struct UreqClient {
    agent: ureq::Agent,
}

impl Default for UreqClient {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { agent }
    }
}

impl HttpGet for UreqClient {
    fn get(&self, url: &str, user_agent: &str) -> Result<Vec<u8>, HttpError> {
        match self.agent.get(url).header("User-Agent", user_agent).call() {
            Ok(mut resp) => resp
                .body_mut()
                .with_config()
                .limit(MAX_BODY)
                .read_to_vec()
                .map_err(|e| HttpError::Network(e.to_string())),
            Err(ureq::Error::StatusCode(code)) => Err(HttpError::Status(code)),
            Err(e) => Err(HttpError::Network(e.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub user_agent: Option<String>,
    pub base_url: String,
    /// Extra attempts after a transient failure.
    pub max_retries: u32,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            user_agent: None,
            base_url: EDGAR_ARCHIVE.to_owned(),
            max_retries: 2,
        }
    }
}

impl FetchConfig {
    /// Applies the user-agent environment override, if set and non-blank.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(ua) = std::env::var(USER_AGENT_ENV) {
            if !ua.trim().is_empty() {
                self.user_agent = Some(ua);
            }
        }
        self
    }
}

pub struct EdgarFetcher<C = UreqClient> {
    config: FetchConfig,
    client: C,
}

impl EdgarFetcher<UreqClient> {
    pub fn new(config: FetchConfig) -> Self {
        Self::with_client(config, UreqClient::default())
    }
}

fn throttle() {
    static LAST: Mutex<Option<Instant>> = Mutex::new(None);
    let mut last = LAST.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(prev) = *last {
        let next = prev + MIN_INTERVAL;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        }
    }
    *last = Some(Instant::now());
}

fn accession_lock(key: &str) -> Arc<Mutex<()>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    let mut map = LOCKS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    map.entry(key.to_owned()).or_default().clone()
}

pub fn cache_path(cache_dir: &Path, accession: &Accession) -> PathBuf {
    cache_dir.join(format!("{accession}.txt"))
}

impl<C: HttpGet> EdgarFetcher<C> {
    pub fn with_client(config: FetchConfig, client: C) -> Self {
        Self { config, client }
    }

    /// Returns the filing text, from cache when present.
    pub fn fetch(&self, accession: &str, cache_dir: &Path) -> Result<String, FetchError> {
        let accession: Accession = accession.parse()?;
        let path = cache_path(cache_dir, &accession);

        let lock = accession_lock(accession.as_str());
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());

        if let Ok(bytes) = fs::read(&path) {
            return Ok(String::from_utf8_lossy(&bytes).into_owned());
        }
        let user_agent = self
            .config
            .user_agent
            .as_deref()
            .filter(|ua| !ua.trim().is_empty())
            .ok_or(FetchError::Disabled)?;

        let url = accession.url(&self.config.base_url);
        let mut attempt = 0;
        let bytes = loop {
            throttle();
            match self.client.get(&url, user_agent) {
                Ok(bytes) => break bytes,
                Err(HttpError::Status(404)) => return Err(FetchError::NotFound(url)),
                Err(e) => {
                    let err = FetchError::Transient {
                        url: url.clone(),
                        reason: match e {
                            HttpError::Status(code) => format!("HTTP {code}"),
                            HttpError::Network(msg) => msg,
                        },
                    };
                    if attempt >= self.config.max_retries {
                        return Err(err);
                    }
                    attempt += 1;
                    std::thread::sleep(MIN_INTERVAL * (1 << attempt));
                }
            }
        };

        write_cache(cache_dir, &path, &bytes)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

fn write_cache(cache_dir: &Path, path: &Path, bytes: &[u8]) -> Result<(), FetchError> {
    let cache_err = |source| FetchError::Cache {
        path: path.to_owned(),
        source,
    };
    fs::create_dir_all(cache_dir).map_err(cache_err)?;
    let tmp = path.with_extension(format!("txt.part{}", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(cache_err(e));
    }
    Ok(())
}

/// Fetches with the default HTTP client.
pub fn fetch_10k(accession: &str, cache_dir: &Path, config: &FetchConfig) -> Result<String, FetchError> {
    EdgarFetcher::new(config.clone()).fetch(accession, cache_dir)
}
