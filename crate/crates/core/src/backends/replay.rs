//! Recorded HTTP exchanges for offline tests.
//!
//! Fixtures are JSONL files, one [`Exchange`] per line. Authorization is
//! never recorded.

use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::http::{HttpRequest, HttpResponse, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyEncoding {
    Utf8,
    Base64,
}

/// One recorded request/response pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub url: String,
    pub request_body: String,
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    pub body: String,
    pub body_encoding: BodyEncoding,
}

impl Exchange {
    pub fn new(request: &HttpRequest, response: &HttpResponse) -> Self {
        let (body, body_encoding) = match std::str::from_utf8(&response.body) {
            Ok(s) => (s.to_owned(), BodyEncoding::Utf8),
            Err(_) => (B64.encode(&response.body), BodyEncoding::Base64),
        };
        Exchange {
            url: request.url.clone(),
            request_body: String::from_utf8_lossy(&request.body).into_owned(),
            status: response.status,
            content_type: response.content_type.clone(),
            body,
            body_encoding,
        }
    }

    pub fn response(&self) -> Result<HttpResponse, String> {
        let body = match self.body_encoding {
            BodyEncoding::Utf8 => self.body.clone().into_bytes(),
            BodyEncoding::Base64 => B64.decode(&self.body).map_err(|e| e.to_string())?,
        };
        Ok(HttpResponse {
            status: self.status,
            content_type: self.content_type.clone(),
            body,
        })
    }
}

pub fn read_exchanges(path: &Path) -> io::Result<Vec<Exchange>> {
    let file = io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

/// Answers requests from recorded exchanges. A request matches when its URL
/// and body are byte-identical to a recording; unmatched requests fail as
/// transport errors.
pub struct ReplayTransport {
    exchanges: Vec<Exchange>,
}

impl ReplayTransport {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayTransport { exchanges }
    }

    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self::new(read_exchanges(path.as_ref())?))
    }
}

impl Transport for ReplayTransport {
    fn post(&self, request: &HttpRequest, _bearer: Option<&str>) -> Result<HttpResponse, String> {
        self.exchanges
            .iter()
            .find(|e| e.url == request.url && e.request_body.as_bytes() == request.body.as_slice())
            .ok_or_else(|| format!("no recorded exchange for POST {}", request.url))?
            .response()
    }
}

/// Passes requests through to another transport and records each exchange.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<Exchange>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().unwrap().clone()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut out = io::BufWriter::new(std::fs::File::create(path)?);
        for e in self.log.lock().unwrap().iter() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn post(&self, request: &HttpRequest, bearer: Option<&str>) -> Result<HttpResponse, String> {
        let resp = self.inner.post(request, bearer)?;
        self.log.lock().unwrap().push(Exchange::new(request, &resp));
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_bodies_roundtrip() {
        let req = HttpRequest {
            url: "http://x/gen".into(),
            headers: vec![],
            body: b"{}".to_vec(),
        };
        let resp = HttpResponse {
            status: 200,
            content_type: Some("image/png".into()),
            body: vec![0x89, 0xff, 0x00],
        };
        let e = Exchange::new(&req, &resp);
        assert_eq!(e.body_encoding, BodyEncoding::Base64);
        let replay = ReplayTransport::new(vec![e]);
        assert_eq!(replay.post(&req, None).unwrap(), resp);
        let other = HttpRequest {
            body: b"{ }".to_vec(),
            ..req
        };
        assert!(replay.post(&other, None).is_err());
    }
}
