//! Wire-protocol tests against a loopback fixture server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mtroute::backends::{
    HttpConfig, HttpEmbedder, HttpQe, HttpTranslator, QualityEstimator, RequestContext, Translator,
};
use mtroute::features::EmbeddingSource;
use mtroute::{BackendError, DefaultRouter, EngineSpec, Error, Features, Request, RouterConfig};
use serde_json::{json, Value};

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

impl Reply {
    fn json(status: u16, v: Value) -> Self {
        Self {
            status,
            body: v.to_string(),
            delay: Duration::ZERO,
        }
    }
}

type Handler = dyn Fn(&str, &str, &Value) -> Reply + Send + Sync;

/// One-request-per-connection HTTP/1.1 server on an ephemeral port.
struct Fixture {
    url: String,
    hits: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<(String, Value)>>>,
}

impl Fixture {
    fn start(handler: impl Fn(&str, &str, &Value) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (h, s) = (hits.clone(), seen.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (handler, h, s) = (handler.clone(), h.clone(), s.clone());
                thread::spawn(move || serve(stream, &*handler, &h, &s));
            }
        });
        Self { url, hits, seen }
    }

    fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler, hits: &AtomicUsize, seen: &Mutex<Vec<(String, Value)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    hits.fetch_add(1, Ordering::SeqCst);
    seen.lock().unwrap().push((path.clone(), body.clone()));
    let reply = handler(&method, &path, &body);
    thread::sleep(reply.delay);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
}

fn cfg() -> HttpConfig {
    HttpConfig {
        timeout_ms: 2000,
        ..HttpConfig::default()
    }
}

fn ctx<'a>(id: &'a str, source: &'a str) -> RequestContext<'a> {
    RequestContext {
        request_id: id,
        source,
        target_lang: "",
    }
}

fn engine() -> EngineSpec {
    EngineSpec::simulated(0, "remote", 10.0)
}

#[test]
fn translate_sends_protocol_fields() {
    let fx = Fixture::start(|_, _, b| {
        Reply::json(200, json!({"translation": format!("T({})", b["source"].as_str().unwrap())}))
    });
    let tr = HttpTranslator::new(&fx.url, cfg());
    let out = tr.translate(&engine(), &ctx("r1", "hallo welt")).unwrap();
    assert_eq!(out, "T(hallo welt)");
    let seen = fx.seen.lock().unwrap();
    assert_eq!(seen[0].0, "/translate");
    assert_eq!(seen[0].1, json!({"id": "r1", "source": "hallo welt", "target_lang": "de"}));
    assert_eq!(tr.calls(), 1);
}

#[test]
fn error_status_carries_message() {
    let fx = Fixture::start(|_, _, _| Reply::json(503, json!({"error": "overloaded"})));
    let tr = HttpTranslator::new(&fx.url, cfg());
    let err = tr.translate(&engine(), &ctx("r1", "x")).unwrap_err();
    assert_eq!(
        err,
        BackendError::Status {
            status: 503,
            message: "overloaded".into()
        }
    );
}

#[test]
fn malformed_body_is_distinct() {
    let fx = Fixture::start(|_, _, _| Reply {
        status: 200,
        body: "{\"translated\": 1".into(),
        delay: Duration::ZERO,
    });
    let tr = HttpTranslator::new(&fx.url, cfg());
    assert!(matches!(
        tr.translate(&engine(), &ctx("r1", "x")),
        Err(BackendError::Malformed(_))
    ));
}

#[test]
fn slow_server_times_out() {
    let fx = Fixture::start(|_, _, _| Reply {
        delay: Duration::from_millis(1500),
        ..Reply::json(200, json!({"translation": "late"}))
    });
    let tr = HttpTranslator::new(
        &fx.url,
        HttpConfig {
            timeout_ms: 200,
            ..HttpConfig::default()
        },
    );
    assert_eq!(tr.translate(&engine(), &ctx("r1", "x")), Err(BackendError::Timeout));
}

#[test]
fn unreachable_host_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let tr = HttpTranslator::new(&format!("http://127.0.0.1:{port}"), cfg());
    assert!(matches!(
        tr.translate(&engine(), &ctx("r1", "x")),
        Err(BackendError::Transport(_))
    ));
}

#[test]
fn no_implicit_retries_and_explicit_retries_are_counted() {
    let fx = Fixture::start(|_, _, _| Reply::json(500, json!({"error": "nope"})));
    let once = HttpTranslator::new(&fx.url, cfg());
    assert!(once.translate(&engine(), &ctx("r1", "x")).is_err());
    assert_eq!((once.calls(), fx.hits()), (1, 1));

    let thrice = HttpTranslator::new(
        &fx.url,
        HttpConfig {
            retries: 2,
            ..cfg()
        },
    );
    assert!(thrice.translate(&engine(), &ctx("r1", "x")).is_err());
    assert_eq!((thrice.calls(), fx.hits()), (3, 4));
}

#[test]
fn retry_succeeds_after_transient_failure() {
    let n = AtomicUsize::new(0);
    let fx = Fixture::start(move |_, _, _| {
        if n.fetch_add(1, Ordering::SeqCst) == 0 {
            Reply::json(502, json!({"error": "flaky"}))
        } else {
            Reply::json(200, json!({"translation": "ok"}))
        }
    });
    let tr = HttpTranslator::new(&fx.url, HttpConfig { retries: 1, ..cfg() });
    assert_eq!(tr.translate(&engine(), &ctx("r1", "x")).unwrap(), "ok");
    assert_eq!(tr.calls(), 2);
}

#[test]
fn score_batch_and_length_check() {
    let fx = Fixture::start(|_, _, b| {
        let n = b["hypotheses"].as_array().unwrap().len();
        let scores: Vec<f64> = (0..n).map(|i| 0.5 + 0.1 * i as f64).collect();
        Reply::json(200, json!({ "scores": scores }))
    });
    let qe = HttpQe::new(&fx.url, cfg());
    let s = qe.batch_score("src", &["a", "b", "c"]).unwrap();
    assert_eq!(s.iter().map(|s| s.value()).collect::<Vec<_>>(), vec![0.5, 0.6, 0.7]);
    assert_eq!(qe.score("src", "a").unwrap().value(), 0.5);
    assert_eq!(fx.seen.lock().unwrap()[0].1, json!({"source": "src", "hypotheses": ["a", "b", "c"]}));

    let short = Fixture::start(|_, _, _| Reply::json(200, json!({"scores": [0.1]})));
    let qe = HttpQe::new(&short.url, cfg());
    assert!(matches!(qe.batch_score("src", &["a", "b"]), Err(BackendError::Malformed(_))));
}

#[test]
fn meta_and_embeddings() {
    let fx = Fixture::start(|method, path, _| match (method, path) {
        ("GET", "/meta") => Reply::json(200, json!({"embedding_dim": 3, "model": "enc"})),
        ("POST", "/embed") => Reply::json(200, json!({"embedding": [0.1, 0.2, 0.3]})),
        _ => Reply::json(404, json!({"error": "no route"})),
    });
    let qe = HttpQe::new(&fx.url, cfg());
    let meta = qe.meta().unwrap();
    assert_eq!(meta.embedding_dim, 3);

    let emb = HttpEmbedder::new(&fx.url, cfg(), meta.embedding_dim);
    let v: Vec<f64> = emb.embedding("r1", "hello").unwrap();
    assert_eq!(v, vec![0.1, 0.2, 0.3]);

    let wrong = HttpEmbedder::new(&fx.url, cfg(), 4);
    assert!(matches!(
        EmbeddingSource::<f64>::embedding(&wrong, "r1", "hello"),
        Err(Error::Format(_))
    ));
}

/// A router driven entirely over HTTP: engine 1 always scores best, so
/// with alpha = 0 every request ends up answered by engine 1.
#[test]
fn router_runs_end_to_end_over_http() {
    let mt = Fixture::start(|_, _, b| {
        Reply::json(200, json!({"translation": format!("{}::{}", b["id"].as_str().unwrap(), b["target_lang"].as_str().unwrap())}))
    });
    let engines: Vec<EngineSpec> = (0..3).map(|e| EngineSpec::simulated(e, format!("e{e}"), 10.0)).collect();
    // One shared endpoint serves every engine; a wrapper prefixes the
    // engine id so the QE fixture can tell hypotheses apart.
    let tagged: Vec<Arc<dyn Translator>> = (0..3)
        .map(|e| {
            let inner = HttpTranslator::new(&mt.url, cfg());
            Arc::new(Tag(e, inner)) as Arc<dyn Translator>
        })
        .collect();
    let pool = Arc::new(mtroute::backends::EnginePool::new(tagged));
    let qe_fx = Fixture::start(|_, _, b| {
        let scores: Vec<f64> = b["hypotheses"]
            .as_array()
            .unwrap()
            .iter()
            .map(|h| if h.as_str().unwrap().starts_with("e1|") { 0.9 } else { 0.4 })
            .collect();
        Reply::json(200, json!({ "scores": scores }))
    });
    let qe = Arc::new(HttpQe::new(&qe_fx.url, cfg()));
    let config = RouterConfig {
        max_mts: 3,
        alpha: 0.0,
        ..RouterConfig::default()
    };
    let mut router = DefaultRouter::with_softmax(config, engines, pool, qe, 2).unwrap();
    let requests: Vec<Request> = (0..8)
        .map(|i| Request::new(format!("q{i}"), "text", Features::new(vec![1.0, i as f64]).unwrap(), i))
        .collect();
    let out = router.run(requests).unwrap();
    assert_eq!(out.len(), 8);
    for o in &out {
        assert_eq!(o.chosen_engine, 1);
        assert_eq!(o.translation, format!("e1|{}::de", o.request_id));
        assert_eq!(o.engines_called, vec![0, 1, 2]);
    }
    assert_eq!(mt.hits(), 24);
    assert_eq!(qe_fx.hits(), 8);
}

struct Tag(usize, HttpTranslator);

impl Translator for Tag {
    fn translate(&self, engine: &EngineSpec, ctx: &RequestContext<'_>) -> Result<String, BackendError> {
        Ok(format!("e{}|{}", self.0, self.1.translate(engine, ctx)?))
    }
}

#[test]
fn backend_failure_reaches_the_router_intact() {
    let fx = Fixture::start(|_, _, _| Reply::json(500, json!({"error": "down"})));
    let engines: Vec<EngineSpec> = (0..2).map(|e| EngineSpec::simulated(e, format!("e{e}"), 1.0)).collect();
    let tr = Arc::new(HttpTranslator::new(&fx.url, cfg()));
    let qe = Arc::new(HttpQe::new(&fx.url, cfg()));
    let mut router = DefaultRouter::with_softmax(RouterConfig { max_mts: 1, ..RouterConfig::default() }, engines, tr, qe, 1).unwrap();
    router.push(Request::new("a", "x", Features::new(vec![1.0]).unwrap(), 0)).unwrap();
    let err = router.step().unwrap_err();
    assert!(matches!(err, Error::Backend { source: BackendError::Status { status: 500, .. }, .. }));
    assert_eq!(router.queue().len(), 1);
    assert_eq!(mtroute::ErrorClass::Backend, err.class());
}
