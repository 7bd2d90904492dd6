//! Remote client and conformance checks against an in-process stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use conceptplan::attnlab::AttentionDump;
use conceptplan::genclient::conformance::check_service;
use conceptplan::genclient::{GenError, Generator, GeneratorRequest, Mode, RemoteGenerator};

struct Request {
    method: String,
    path: String,
    body: Vec<u8>,
}

struct Reply {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

fn json(status: u16, body: &str) -> Reply {
    Reply {
        status,
        content_type: "application/json",
        body: body.as_bytes().to_vec(),
    }
}

fn read_request(stream: &TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Request { method, path, body })
}

/// Serves each connection with `handler`, one request per connection.
fn serve<F>(handler: F) -> String
where
    F: Fn(&Request) -> Reply + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&stream) else { continue };
            let reply = handler(&req);
            let head = format!(
                "HTTP/1.1 {} X\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.status,
                reply.content_type,
                reply.body.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(&reply.body);
        }
    });
    format!("http://{addr}")
}

fn client(base: &str, retries: usize) -> RemoteGenerator {
    RemoteGenerator::new(base, retries, Duration::from_secs(5)).unwrap()
}

fn request() -> GeneratorRequest {
    GeneratorRequest::new(
        vec!["pitcher".into(), "throw".into(), "ball".into(), "batter".into()],
        Mode::Planned,
    )
}

/// A well-behaved service: template text, uniform dumps, 400 on bad input.
fn conforming(req: &Request) -> Reply {
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/healthz") => json(200, r#"{"model_tag":"stub-1"}"#),
        ("POST", "/generate") => {
            let Ok(v) = serde_json::from_slice::<serde_json::Value>(&req.body) else {
                return json(400, r#"{"error":"malformed body"}"#);
            };
            let concepts: Vec<String> = v["concepts"]
                .as_array()
                .map(|a| a.iter().filter_map(|c| c.as_str().map(String::from)).collect())
                .unwrap_or_default();
            if concepts.is_empty() {
                return json(400, r#"{"error":"empty concepts"}"#);
            }
            let lps = if v["want_logprobs"].as_bool().unwrap_or(false) {
                serde_json::to_string(&vec![-0.5; concepts.len() + 1]).unwrap()
            } else {
                "null".into()
            };
            let text = format!("{} .", concepts.join(" "));
            json(
                200,
                &format!(r#"{{"text":{text:?},"token_logprobs":{lps},"model_tag":"stub-1"}}"#),
            )
        }
        ("POST", "/dump") => {
            let v: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
            let plan: Vec<String> = v["concepts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_str().unwrap().to_string())
                .collect();
            let dump = AttentionDump::uniform("probe", &plan, 2, 2, 4);
            Reply {
                status: 200,
                content_type: "application/octet-stream",
                body: dump.to_bytes(),
            }
        }
        _ => json(404, r#"{"error":"not found"}"#),
    }
}

#[test]
fn decodes_well_formed_reply() {
    let base = serve(conforming);
    let resp = client(&base, 0).generate(&request()).unwrap();
    assert_eq!(resp.text, "pitcher throw ball batter .");
    assert_eq!(resp.token_logprobs, vec![-0.5; 5]);
    assert_eq!(resp.model_tag, "stub-1");
    assert_eq!(client(&base, 0).model_tag().unwrap(), "stub-1");
}

#[test]
fn missing_logprobs_is_protocol_error() {
    let base = serve(|_| json(200, r#"{"text":"a b .","token_logprobs":null,"model_tag":"t"}"#));
    let err = client(&base, 0).generate(&request()).unwrap_err();
    assert!(matches!(err, GenError::Protocol(_)), "{err:?}");
}

#[test]
fn positive_logprob_is_protocol_error() {
    let base = serve(|_| json(200, r#"{"text":"a b .","token_logprobs":[-0.1,0.2],"model_tag":"t"}"#));
    assert!(matches!(
        client(&base, 0).generate(&request()),
        Err(GenError::Protocol(_))
    ));
}

#[test]
fn transport_failures_exhaust_retries() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let accepted = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&accepted);
    thread::spawn(move || {
        for stream in listener.incoming() {
            // hang up without replying
            drop(stream);
            counter.fetch_add(1, Ordering::SeqCst);
        }
    });
    let err = client(&base, 2).generate(&request()).unwrap_err();
    assert!(matches!(err, GenError::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(accepted.load(Ordering::SeqCst), 3);
}

#[test]
fn error_statuses_map_without_retry() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = Arc::clone(&hits);
    let base = serve(move |req| {
        h.fetch_add(1, Ordering::SeqCst);
        if req.path == "/generate" {
            json(500, r#"{"error":"model failure"}"#)
        } else {
            json(400, r#"{"error":"bad request"}"#)
        }
    });
    let gen = client(&base, 2);
    assert_eq!(
        gen.generate(&request()).unwrap_err(),
        GenError::Status {
            code: 500,
            msg: "model failure".into()
        }
    );
    assert_eq!(
        gen.dump(&["a".into()], Mode::Draft).unwrap_err(),
        GenError::Status {
            code: 400,
            msg: "bad request".into()
        }
    );
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn empty_request_rejected_client_side() {
    let req = GeneratorRequest::new(vec![], Mode::Draft);
    assert!(matches!(
        client("http://127.0.0.1:9", 0).generate(&req),
        Err(GenError::InvalidRequest(_))
    ));
}

#[test]
fn dump_round_trips_over_the_wire() {
    let base = serve(conforming);
    let bytes = client(&base, 0)
        .dump(&["dog".into(), "frisbee".into()], Mode::Planned)
        .unwrap();
    let dump = conceptplan::attnlab::load_dump(&bytes).unwrap();
    assert_eq!(dump.plan, vec!["dog", "frisbee"]);
    assert_eq!(dump.enc_attn.len(), 2 * 2 * 2 * 2);
}

#[test]
fn stub_passes_conformance_suite() {
    let base = serve(conforming);
    let report = check_service(&base, Duration::from_secs(5)).unwrap();
    for c in &report.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    assert!(report.passed());
}

#[test]
fn conformance_flags_broken_service() {
    // accepts empty concepts and serves non-stochastic dumps
    let base = serve(|req| match req.path.as_str() {
        "/healthz" => json(200, r#"{"model_tag":"broken"}"#),
        "/generate" => json(200, r#"{"text":"x .","token_logprobs":[-1.0],"model_tag":"broken"}"#),
        _ => {
            let mut d = AttentionDump::uniform("p", &["pitcher".into(), "throw".into()], 1, 1, 1);
            d.enc_attn[0] = 0.9;
            Reply {
                status: 200,
                content_type: "application/octet-stream",
                body: d.to_bytes(),
            }
        }
    });
    let report = check_service(&base, Duration::from_secs(5)).unwrap();
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert_eq!(
        failed,
        [
            "dump_row_stochastic",
            "rejects_empty_concepts",
            "rejects_malformed_body"
        ]
    );
}

/// Runs the suite against a live service when `CONCEPTPLAN_SERVICE_URL` is set.
#[test]
fn live_service_conformance() {
    let Ok(url) = std::env::var("CONCEPTPLAN_SERVICE_URL") else {
        eprintln!("CONCEPTPLAN_SERVICE_URL not set; skipping live conformance");
        return;
    };
    let report = check_service(&url, Duration::from_secs(60)).unwrap();
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    assert!(report.passed());
}
