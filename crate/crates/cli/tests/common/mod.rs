#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// Minimal HTTP/1.1 server answering chat-completion requests. The first
/// `failures.len()` requests get the listed status codes; later ones get a
/// completion echoing the request's SMILES line.
pub struct MockServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<serde_json::Value>>>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<Vec<u8>> {
    let mut content_length = 0;
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(body)
}

impl MockServer {
    pub fn start(failures: Vec<u16>) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (h, b) = (hits.clone(), bodies.clone());
        let failures = Arc::new(failures);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (h, b, failures) = (h.clone(), b.clone(), failures.clone());
                std::thread::spawn(move || {
                    let mut writer = stream.try_clone().unwrap();
                    let mut reader = BufReader::new(stream);
                    while let Some(body) = read_request(&mut reader) {
                        let n = h.fetch_add(1, Ordering::SeqCst);
                        let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
                        b.lock().unwrap().push(json.clone());
                        let (status, payload) = if let Some(&code) = failures.get(n) {
                            (code, r#"{"error":"scripted"}"#.to_string())
                        } else {
                            let text = json["messages"][0]["content"][0]["text"].as_str().unwrap_or("");
                            let smiles = text.lines().find(|l| l.starts_with("SMILES: ")).unwrap_or("SMILES: ?");
                            let reply = serde_json::json!({
                                "choices": [{ "message": { "role": "assistant", "content": format!("Described molecule, {smiles}.") } }],
                                "usage": { "prompt_tokens": 10, "completion_tokens": 5 }
                            });
                            (200, reply.to_string())
                        };
                        let resp = format!(
                            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
                            payload.len()
                        );
                        if writer.write_all(resp.as_bytes()).is_err() {
                            break;
                        }
                    }
                });
            }
        });
        MockServer { url, hits, bodies }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}
