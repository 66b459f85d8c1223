use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::time::Duration;

use serde_json::{json, Value};
use techradar_core::embedder::*;

/// Serves `responses` one connection each; reports every request body seen.
type Responder = Box<dyn Fn(&Value) -> (u16, String) + Send>;

fn serve(responses: Vec<Responder>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for respond in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let request: Value = serde_json::from_slice(&body).unwrap();
            let (status, payload) = respond(&request);
            let _ = tx.send(request);
            let mut s = stream;
            write!(
                s,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/embed"), rx)
}

fn vectors_of(dim: usize) -> Responder {
    Box::new(move |req| {
        let n = req["texts"].as_array().unwrap().len();
        let vecs: Vec<Vec<f64>> = (0..n).map(|i| (0..dim).map(|j| (i * dim + j) as f64).collect()).collect();
        (200, json!({ "vectors": vecs }).to_string())
    })
}

#[test]
fn batches_are_sent_in_order() {
    let (url, seen) = serve(vec![vectors_of(8), vectors_of(8)]);
    let svc = ExternalService::new(&url, 8, 2, Duration::from_secs(5));
    let out = svc.embed(&["a", "b", "c"]).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[2][0], 0.0);
    assert_eq!(out[1][0], 8.0);
    assert_eq!(seen.recv().unwrap(), json!({ "texts": ["a", "b"] }));
    assert_eq!(seen.recv().unwrap(), json!({ "texts": ["c"] }));
}

#[test]
fn wrong_dimension_is_rejected() {
    let (url, _) = serve(vec![vectors_of(5)]);
    let svc = ExternalService::new(&url, 8, 16, Duration::from_secs(5));
    assert_eq!(svc.embed(&["a"]).unwrap_err(), EmbedError::Dimension { expected: 8, got: 5 });
}

#[test]
fn wrong_count_and_bad_payloads_are_service_errors() {
    let (url, _) = serve(vec![
        Box::new(|_| (200, json!({ "vectors": [] }).to_string())),
        Box::new(|_| (200, "not json".to_string())),
        Box::new(|_| (500, "{}".to_string())),
    ]);
    let svc = ExternalService::new(&url, 8, 16, Duration::from_secs(5));
    for _ in 0..3 {
        assert!(matches!(svc.embed(&["a"]), Err(EmbedError::Service(_))));
    }
}

#[test]
fn unreachable_service() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let svc = ExternalService::new(&format!("http://127.0.0.1:{port}/"), 8, 4, Duration::from_secs(2));
    let err = svc.embed(&["a"]).unwrap_err();
    assert!(matches!(err, EmbedError::Service(ref m) if m.contains("127.0.0.1")));
}

#[test]
fn config_requires_endpoint_for_external_provider() {
    let cfg = EmbedderConfig { provider: ProviderKind::ExternalService, ..Default::default() };
    assert!(matches!(cfg.validate(), Err(EmbedError::Config(_))));
    let cfg = EmbedderConfig { endpoint: Some("http://x".into()), ..cfg };
    assert!(cfg.validate().is_ok());
    assert!(cfg.provenance().starts_with("external-service/v1"));
}
