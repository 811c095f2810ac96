use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::thread;

use kbwalk::providers::{
    EmbeddingProvider, EntailmentProvider, InferenceProvider, ProviderError, Relation, RemoteClient,
    RemoteConfig,
};
use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Deserialize)]
struct Transcript {
    call: Value,
    exchanges: Vec<Exchange>,
    expect: Value,
}

#[derive(Debug, Clone, Deserialize)]
struct Exchange {
    request: Request,
    response: Response,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct Request {
    method: String,
    path: String,
    body: String,
}

#[derive(Debug, Clone, Deserialize)]
struct Response {
    status: u16,
    body: String,
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../protocol/golden")
}

fn read_request(stream: &mut impl Read) -> Request {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap().to_owned();
    let path = parts.next().unwrap().to_owned();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).unwrap();
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    Request {
        method,
        path,
        body: String::from_utf8(body).unwrap(),
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

/// Serves the scripted responses in order, one connection per exchange, and
/// returns the requests it saw.
fn mock_server(exchanges: Vec<Exchange>) -> (String, thread::JoinHandle<Vec<Request>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut seen = Vec::new();
        for ex in exchanges {
            let (mut stream, _) = listener.accept().unwrap();
            seen.push(read_request(&mut stream));
            let body = ex.response.body.as_bytes();
            write!(
                stream,
                "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                ex.response.status,
                reason(ex.response.status),
                body.len()
            )
            .unwrap();
            stream.write_all(body).unwrap();
            stream.flush().unwrap();
        }
        seen
    });
    (base, handle)
}

fn client(base: String) -> RemoteClient {
    RemoteClient::new(RemoteConfig {
        base_url: base,
        timeout_secs: 5.0,
        retries: 2,
        backoff_ms: 1,
    })
}

fn perform(client: &RemoteClient, call: &Value) -> Result<Value, ProviderError> {
    let s = |k: &str| call[k].as_str().unwrap().to_owned();
    match call["op"].as_str().unwrap() {
        "embed" => {
            let texts: Vec<String> = serde_json::from_value(call["texts"].clone()).unwrap();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let vectors = client.embed(&refs)?;
            Ok(json!(vectors.iter().map(|v| v.values().to_vec()).collect::<Vec<_>>()))
        }
        "infer" => {
            let relation = Relation::from_name(&s("relation")).unwrap();
            let n = call["n"].as_u64().unwrap() as usize;
            let candidates = client.infer(&s("context"), relation, n)?;
            for c in &candidates {
                assert_eq!(c.relation, relation);
            }
            Ok(json!(candidates
                .iter()
                .map(|c| json!({"text": c.text, "token_probs": c.token_probs}))
                .collect::<Vec<_>>()))
        }
        "entail" => Ok(json!(client.entail(&s("premise"), &s("hypothesis"))?)),
        other => panic!("unknown op {other}"),
    }
}

fn request_body(call: &Value) -> Vec<u8> {
    let s = |k: &str| call[k].as_str().unwrap().to_owned();
    match call["op"].as_str().unwrap() {
        "embed" => {
            let texts: Vec<String> = serde_json::from_value(call["texts"].clone()).unwrap();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            RemoteClient::embed_body(&refs)
        }
        "infer" => RemoteClient::infer_body(
            &s("context"),
            Relation::from_name(&s("relation")).unwrap(),
            call["n"].as_u64().unwrap() as usize,
        ),
        "entail" => RemoteClient::entail_body(&s("premise"), &s("hypothesis")),
        other => panic!("unknown op {other}"),
    }
}

fn check(name: &str, t: Transcript) {
    // request bodies are byte-identical to the transcript
    let want = t.exchanges[0].request.body.as_bytes();
    assert_eq!(request_body(&t.call), want, "{name}: request body");

    let (base, server) = mock_server(t.exchanges.clone());
    let got = perform(&client(base), &t.call);
    let seen = server.join().unwrap();
    let expected: Vec<Request> = t.exchanges.iter().map(|e| e.request.clone()).collect();
    assert_eq!(seen, expected, "{name}: requests");

    if let Some(ok) = t.expect.get("ok") {
        let got = got.unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&got, ok, "{name}");
        return;
    }
    let err = got.expect_err(name);
    match (t.expect["error"].as_str().unwrap(), &err) {
        ("transport", ProviderError::Transport { attempts, .. }) => {
            assert_eq!(u64::from(*attempts), t.expect["attempts"].as_u64().unwrap(), "{name}");
        }
        ("remote", ProviderError::Remote { status, message }) => {
            assert_eq!(u64::from(*status), t.expect["status"].as_u64().unwrap(), "{name}");
            assert_eq!(message, t.expect["message"].as_str().unwrap(), "{name}");
        }
        ("protocol", ProviderError::Protocol(_)) => {}
        (kind, other) => panic!("{name}: expected {kind} error, got {other:?}"),
    }
}

#[test]
fn golden_transcripts() {
    let mut names: Vec<PathBuf> = std::fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    assert!(names.len() >= 10);
    for path in names {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let t: Transcript = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        check(&name, t);
    }
}

#[test]
fn unreachable_server_is_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let c = client(format!("http://127.0.0.1:{port}"));
    match c.entail("p", "h").unwrap_err() {
        ProviderError::Transport { attempts, .. } => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_inputs_never_reach_the_wire() {
    let c = client("http://127.0.0.1:9".into());
    assert!(matches!(c.embed(&[]), Err(ProviderError::InvalidInput(_))));
    assert!(matches!(c.entail("", "h"), Err(ProviderError::InvalidInput(_))));
    assert!(matches!(c.infer("ctx", Relation::XWant, 0), Err(ProviderError::InvalidInput(_))));
}
