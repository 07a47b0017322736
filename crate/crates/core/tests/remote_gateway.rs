use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use guide_core::gateway::{
    tool_call_response, Gateway, GatewayError, GatewayReply, Intent, RemoteConfig, RemoteGateway,
};
use guide_core::map::{parse_map, NodeId, TopoMap};
use serde_json::json;

enum Reply {
    Status(u16, String),
    Hang,
}

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<(String, String)>>>,
}

/// One connection per scripted reply. Records (headers, body) of each request.
fn stub(script: Vec<Reply>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    thread::spawn(move || {
        for reply in script {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let log = log.clone();
            thread::spawn(move || serve(stream, reply, &log));
        }
    });
    Stub { url, requests }
}

fn serve(stream: std::net::TcpStream, reply: Reply, log: &Mutex<Vec<(String, String)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut headers = String::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        headers.push_str(&line);
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    log.lock().unwrap().push((headers, String::from_utf8(body).unwrap()));
    let mut stream = stream;
    match reply {
        Reply::Status(code, body) => {
            let _ = write!(
                        stream,
                        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
        }
        Reply::Hang => thread::sleep(Duration::from_millis(600)),
    }
}

impl Stub {
    /// Requests seen so far, waiting briefly for handlers still reading.
    fn count(&self, want: usize) -> usize {
        for _ in 0..100 {
            let n = self.requests.lock().unwrap().len();
            if n >= want {
                return n;
            }
            thread::sleep(Duration::from_millis(10));
        }
        self.requests.lock().unwrap().len()
    }
}

fn ok(body: serde_json::Value) -> Reply {
    Reply::Status(200, body.to_string())
}

fn text(content: &str) -> Reply {
    ok(json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }))
}

fn gateway(url: &str) -> RemoteGateway {
    let mut cfg = RemoteConfig::new(url, "test-model");
    cfg.api_key = Some("k123".into());
    cfg.timeout = Duration::from_millis(250);
    cfg.initial_backoff = Duration::from_millis(5);
    RemoteGateway::new(cfg).unwrap()
}

fn map() -> TopoMap {
    parse_map("MAP v1 name=test\nNODE A 0 0\nNODE E 5 0 tag=elevator label=\"Elevator\"\nEDGE A E dist=5 dir=0\n")
        .unwrap()
}

#[test]
fn tool_call_becomes_an_intent() {
    let s = stub(vec![ok(tool_call_response(
        "plan_route",
        &json!({ "destination": "elevator" }),
    ))]);
    let mut g = gateway(&s.url);
    let reply = g.interpret_query("take me to the elevator", &map());
    assert_eq!(
        reply,
        GatewayReply::Intent(Intent::NavigateTo {
            place: "elevator".into(),
            node: Some(NodeId::new("E").unwrap()),
        })
    );
    let reqs = s.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert!(reqs[0].0.to_ascii_lowercase().contains("authorization: bearer k123"));
    let body: serde_json::Value = serde_json::from_str(&reqs[0].1).unwrap();
    assert_eq!(body["model"], "test-model");
    assert!(body["tools"].as_array().is_some_and(|t| !t.is_empty()));
    let last = body["messages"].as_array().unwrap().last().unwrap();
    assert_eq!(last["content"], "take me to the elevator");
}

#[test]
fn malformed_arguments_are_rejected() {
    let s = stub(vec![
        ok(tool_call_response("plan_route", &json!({ "dest": 3 }))),
        ok(tool_call_response("launch_rocket", &json!({}))),
    ]);
    let mut g = gateway(&s.url);
    assert_eq!(g.interpret_query("go", &map()), GatewayReply::Intent(Intent::Unknown));
    assert_eq!(g.interpret_query("go", &map()), GatewayReply::Intent(Intent::Unknown));
    assert_eq!(g.diagnostics().len(), 2);
    assert!(g.diagnostics()[1].contains("launch_rocket"));
}

#[test]
fn server_errors_are_retried() {
    let s = stub(vec![
        Reply::Status(503, "{}".into()),
        text(r#"{"hazardous": true, "reason": "slippery", "confidence": 0.9}"#),
    ]);
    let mut g = gateway(&s.url);
    let v = g.classify_hazard(&["wet_floor_sign".into()], "corridor").unwrap();
    assert!(v.hazardous);
    assert_eq!(v.reason, "slippery");
    assert_eq!(s.requests.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let s = stub(vec![Reply::Status(401, "nope".into()), text("unused")]);
    let mut g = gateway(&s.url);
    let err = g.classify_hazard(&["chair".into()], "").unwrap_err();
    assert!(matches!(err, GatewayError::Rejected { status: 401, .. }), "{err:?}");
    assert_eq!(s.requests.lock().unwrap().len(), 1);
}

#[test]
fn timeouts_give_up_after_three_attempts() {
    let s = stub(vec![Reply::Hang, Reply::Hang, Reply::Hang]);
    let mut g = gateway(&s.url);
    let err = g.classify_hazard(&["chair".into()], "").unwrap_err();
    assert!(matches!(err, GatewayError::Network { attempts: 3, .. }), "{err:?}");
    assert_eq!(s.count(3), 3);
    // The agent-facing path degrades to an unknown intent.
    let s = stub(vec![Reply::Hang, Reply::Hang, Reply::Hang]);
    let mut g = gateway(&s.url);
    assert_eq!(g.interpret_query("go", &map()), GatewayReply::Intent(Intent::Unknown));
}

#[test]
fn unparseable_verdict_falls_back_to_rules() {
    let s = stub(vec![text("it looks fine to me")]);
    let mut g = gateway(&s.url);
    let v = g.classify_hazard(&["wet_floor_sign".into()], "").unwrap();
    assert!(v.hazardous);
    assert!(!g.diagnostics().is_empty());
}

#[test]
fn route_context_reaches_the_prompt() {
    let s = stub(vec![text("ok")]);
    let mut g = gateway(&s.url);
    Gateway::set_route_context(&mut g, "test", "A -> E (5 m)");
    g.interpret_query("where am i", &map());
    let body = s.requests.lock().unwrap()[0].1.clone();
    assert!(body.contains("A -> E (5 m)"), "{body}");
}
