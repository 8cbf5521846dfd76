//! In-process SPARQL endpoint backed by an [`InMemoryGraph`], for tests and
//! offline demos.
//!
//! The server understands exactly the query shapes produced by the default
//! templates in [`super::sparql`] and answers with the standard
//! `application/sparql-results+json` encoding. Ids are exposed under the
//! `urn:kg:` prefix, matching the client's fallback, so a [`SparqlBackend`]
//! pointed here returns the same bare ids as an [`InMemoryBackend`] over the
//! same graph.
//!
//! [`SparqlBackend`]: super::sparql::SparqlBackend
//! [`InMemoryBackend`]: super::InMemoryBackend

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use regex::Regex;

use crate::graph::{Direction, InMemoryGraph, TripleObject};

const PREFIX: &str = "urn:kg:";

/// Handle to a running stub endpoint. Dropping it stops the server.
pub struct SparqlStubServer {
    base_url: String,
    requests: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    addr: std::net::SocketAddr,
    handle: Option<JoinHandle<()>>,
}

impl SparqlStubServer {
    /// Bind a free local port and serve `graph` until shutdown.
    pub fn spawn(graph: InMemoryGraph) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let graph = Arc::new(graph);

        let req_counter = Arc::clone(&requests);
        let stop = Arc::clone(&shutdown);
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                req_counter.fetch_add(1, Ordering::SeqCst);
                if let Err(e) = handle_connection(stream, &graph) {
                    log::debug!("stub connection error: {e}");
                }
            }
        });

        Ok(SparqlStubServer {
            base_url: format!("http://{addr}/sparql"),
            requests,
            shutdown,
            addr,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Number of HTTP requests served so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for SparqlStubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop; the wake connection is not counted as a
        // request because the flag is checked first.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, graph: &InMemoryGraph) -> std::io::Result<()> {
    stream.set_read_timeout(Some(std::time::Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);

    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let target = parts.next().unwrap_or("").to_string();

    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some(v) = header
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
            .and_then(|v| v.parse::<usize>().ok())
        {
            content_length = v;
        }
    }

    let raw_query = if method == "POST" {
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        extract_query_param(&String::from_utf8_lossy(&body))
    } else {
        target
            .split_once('?')
            .map(|(_, qs)| extract_query_param(qs))
            .unwrap_or(None)
    };

    let response = match raw_query {
        Some(q) => match answer(graph, &q) {
            Some(json) => http_response(200, "application/sparql-results+json", &json),
            None => http_response(400, "text/plain", "unsupported query shape"),
        },
        None => http_response(400, "text/plain", "missing query parameter"),
    };
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

fn http_response(status: u16, content_type: &str, body: &str) -> String {
    let reason = if status == 200 { "OK" } else { "Bad Request" };
    format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
}

fn extract_query_param(query_string: &str) -> Option<String> {
    for pair in query_string.split('&') {
        if let Some(value) = pair.strip_prefix("query=") {
            return Some(percent_decode(value));
        }
    }
    None
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b'%' if i + 2 < bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).ok();
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(b) => {
                        out.push(b);
                        i += 3;
                    }
                    None => {
                        out.push(bytes[i]);
                        i += 1;
                    }
                }
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn values_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"VALUES \?([so]) \{ <([^>]+)> \}").unwrap())
}

fn relation_pattern_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\?s \?r \?o").unwrap())
}

fn entity_pattern_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\?s <([^>]+)> \?o").unwrap())
}

fn strip_prefix(iri: &str) -> String {
    iri.strip_prefix(PREFIX).unwrap_or(iri).to_string()
}

fn iri_cell(id: &str) -> serde_json::Value {
    serde_json::json!({"type": "uri", "value": format!("{PREFIX}{id}")})
}

fn object_cell(obj: &TripleObject) -> serde_json::Value {
    match obj {
        TripleObject::Entity(e) => iri_cell(&e.id),
        TripleObject::Literal(l) => match &l.datatype {
            Some(dt) => {
                serde_json::json!({"type": "literal", "value": l.text, "datatype": dt})
            }
            None => serde_json::json!({"type": "literal", "value": l.text}),
        },
    }
}

fn results_doc(vars: &[&str], rows: Vec<serde_json::Value>) -> String {
    serde_json::json!({
        "head": {"vars": vars},
        "results": {"bindings": rows},
    })
    .to_string()
}

/// Evaluate one of the two supported query shapes, or `None` if the query
/// matches neither.
fn answer(graph: &InMemoryGraph, query: &str) -> Option<String> {
    let values = values_regex().captures(query)?;
    let pinned_var = values.get(1)?.as_str();
    let entity_id = strip_prefix(values.get(2)?.as_str());

    if let Some(rel) = entity_pattern_regex().captures(query) {
        // Entity search: fixed relation, one variable pinned by VALUES.
        let relation_id = strip_prefix(rel.get(1)?.as_str());
        let mut rows = Vec::new();
        for t in graph.triples() {
            if t.relation.id != relation_id {
                continue;
            }
            let matches = match pinned_var {
                "s" => t.subject.id == entity_id,
                _ => t.object.key() == entity_id,
            };
            if matches {
                rows.push(serde_json::json!({
                    "s": iri_cell(&t.subject.id),
                    "o": object_cell(&t.object),
                }));
            }
        }
        return Some(results_doc(&["s", "o"], rows));
    }

    if relation_pattern_regex().is_match(query) {
        // Relation search: enumerate distinct relations around the pinned
        // entity. Direction comes from which variable VALUES pinned.
        let dir = if pinned_var == "s" {
            Direction::Outgoing
        } else {
            Direction::Incoming
        };
        let entity = crate::graph::EntityId::new(entity_id);
        let mut seen = std::collections::BTreeSet::new();
        for (relation, _) in graph.neighbors(&entity, dir) {
            seen.insert(relation.id);
        }
        let rows = seen
            .into_iter()
            .map(|r: String| serde_json::json!({"r": iri_cell(&r)}))
            .collect();
        return Some(results_doc(&["r"], rows));
    }

    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::toy_dogs_graph;

    #[test]
    fn decodes_percent_and_plus() {
        assert_eq!(percent_decode("a+b%20c%7B%7D"), "a b c{}");
    }

    #[test]
    fn answers_relation_search_shape() {
        let g = toy_dogs_graph();
        let q = "SELECT DISTINCT ?r WHERE { ?s ?r ?o . VALUES ?s { <urn:kg:South_Korea> } }";
        let body = answer(&g, q).unwrap();
        assert!(body.contains("urn:kg:head_of_government"));
    }

    #[test]
    fn answers_entity_search_shape() {
        let g = toy_dogs_graph();
        let q = "SELECT DISTINCT ?s ?o WHERE { ?s <urn:kg:head_of_government> ?o . VALUES ?s { <urn:kg:South_Korea> } }";
        let body = answer(&g, q).unwrap();
        assert!(body.contains("urn:kg:Yoon_Suk_Yeol"));
    }

    #[test]
    fn rejects_unknown_shape() {
        let g = toy_dogs_graph();
        assert!(answer(&g, "SELECT * WHERE { ?a ?b ?c }").is_none());
    }

    #[test]
    fn serves_http_round_trip() {
        let server = SparqlStubServer::spawn(toy_dogs_graph()).unwrap();
        let url = format!(
            "{}?query={}",
            server.base_url(),
            "SELECT DISTINCT ?r WHERE { ?s ?r ?o . VALUES ?s { <urn:kg:Bluey> } }"
                .replace(' ', "%20")
                .replace('{', "%7B")
                .replace('}', "%7D")
                .replace('<', "%3C")
                .replace('>', "%3E")
                .replace('?', "%3F")
        );
        let body = reqwest::blocking::get(url).unwrap().text().unwrap();
        assert!(body.contains("date_of_birth"));
        assert_eq!(server.request_count(), 1);
    }
}
