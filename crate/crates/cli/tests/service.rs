use std::net::SocketAddr;
use std::time::Duration;

use comanip_cli::protocol::{
    Action, ClientMessage, ControlCommand, Hello, ParamOverrides, SelectScenario, ServerMessage, StateFrame,
    WrenchCommand, MAX_FRAME_BYTES, MAX_PARTICLES,
};
use comanip_cli::service::{Health, Service, ServiceConfig};
use comanip_cli::session::{default_scenario, FADE_S, HOLD_S};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(10);

async fn start() -> Service {
    let cfg = ServiceConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        ..ServiceConfig::default()
    };
    Service::start(cfg).await.unwrap()
}

async fn connect(svc: &Service) -> (Ws, Hello) {
    let url = format!("ws://{}/session", svc.local_addr());
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    match recv(&mut ws).await {
        ServerMessage::Hello(h) => (ws, h),
        other => panic!("expected hello, got {other:?}"),
    }
}

async fn recv(ws: &mut Ws) -> ServerMessage {
    loop {
        match timeout(WAIT, ws.next()).await.expect("no frame in time") {
            Some(Ok(Message::Text(t))) => {
                assert!(t.len() <= MAX_FRAME_BYTES, "frame of {} bytes", t.len());
                return ServerMessage::parse(&t).unwrap();
            }
            Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
            other => panic!("unexpected {other:?}"),
        }
    }
}

async fn state(ws: &mut Ws) -> StateFrame {
    loop {
        if let ServerMessage::State(f) = recv(ws).await {
            return *f;
        }
    }
}

async fn send(ws: &mut Ws, m: ClientMessage) {
    ws.send(Message::Text(m.to_json())).await.unwrap();
}

fn push(f: [f64; 3]) -> ClientMessage {
    ClientMessage::Wrench(WrenchCommand {
        wrench: [f[0], f[1], f[2], 0.0, 0.0, 0.0],
    })
}

fn control(action: Action) -> ClientMessage {
    ClientMessage::Control(ControlCommand { action })
}

async fn healthz(addr: SocketAddr) -> (String, Health) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET /healthz HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let status = buf.lines().next().unwrap().to_string();
    let body = buf.split("\r\n\r\n").nth(1).unwrap();
    (status, serde_json::from_str(body).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn healthz_reports_a_running_tick_count() {
    let svc = start().await;
    let (status, h1) = healthz(svc.local_addr()).await;
    assert!(status.starts_with("HTTP/1.1 200"), "{status}");
    assert_eq!(h1.status, "ok");
    tokio::time::sleep(Duration::from_millis(300)).await;
    let (_, h2) = healthz(svc.local_addr()).await;
    // No client is connected; the simulation runs anyway.
    assert!(h2.tick > h1.tick + 10, "{} -> {}", h1.tick, h2.tick);
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn streams_bounded_frames_at_the_broadcast_rate() {
    let svc = start().await;
    let (mut ws, hello) = connect(&svc).await;
    assert_eq!(hello.version, 1);
    assert_eq!(hello.broadcast_hz, 30.0);
    let t0 = std::time::Instant::now();
    let mut last = state(&mut ws).await;
    let mut n = 0;
    while t0.elapsed() < Duration::from_secs(1) {
        let f = state(&mut ws).await;
        assert!(f.tick >= last.tick);
        assert!(f.particles.len() <= MAX_PARTICLES && !f.particles.is_empty());
        assert!([f.estimate.c_p, f.estimate.c_o].iter().all(|c| (0.0..=1.0).contains(c)));
        let w: f64 = f.particles.iter().map(|p| p.w).sum();
        assert!((w - 1.0).abs() < 1e-6, "{w}");
        last = f;
        n += 1;
    }
    assert!((15..=45).contains(&n), "{n} frames in one second");
    svc.shutdown().await.unwrap();
}

/// A recorded drag: after idling, the user pulls hard along +x for 0.4 s and
/// lets go. Times are session seconds.
fn drag_profile(t: f64) -> Option<[f64; 3]> {
    const ONSET: f64 = 1.5;
    let s = t - ONSET;
    if (0.0..0.4).contains(&s) {
        Some([30.0 * (s / 0.05).min(1.0), 0.0, 0.0])
    } else {
        None
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn scripted_drag_moves_the_estimate_and_confidence() {
    let svc = start().await;
    let (mut ws, _) = connect(&svc).await;
    let mut trace = Vec::new();
    loop {
        let f = state(&mut ws).await;
        if let Some(force) = drag_profile(f.t) {
            send(&mut ws, push(force)).await;
        }
        let t = f.t;
        trace.push(f);
        if t > 3.5 {
            break;
        }
    }
    svc.shutdown().await.unwrap();

    let onset = trace.iter().position(|f| f.t >= 1.5).unwrap();
    let (p0, t0) = (trace[onset].estimate.p_star[0], trace[onset].t);
    let window: Vec<&StateFrame> = trace[onset..].iter().filter(|f| f.t <= t0 + 2.0).collect();
    assert!(window.iter().any(|f| f.u_h.force.x > 20.0), "drag was not applied");
    let p_max = window.iter().map(|f| f.estimate.p_star[0]).fold(f64::MIN, f64::max);
    assert!(p_max > p0 + 0.01, "estimate did not follow +x: {p0} -> {p_max}");

    // Confidence dips below an earlier value inside the window, then climbs
    // back once the motion is explained.
    let c: Vec<f64> = window.iter().map(|f| f.estimate.c_p).collect();
    let mut peak = c[0];
    let mut dip = None;
    for (i, &v) in c.iter().enumerate() {
        peak = peak.max(v);
        if peak - v > 5e-3 {
            dip = Some(i);
            break;
        }
    }
    let dip = dip.unwrap_or_else(|| panic!("c_p never dropped: {c:?}"));
    let low = c[dip..].iter().cloned().fold(f64::MAX, f64::min);
    let i_low = dip + c[dip..].iter().position(|v| *v == low).unwrap();
    assert!(c[i_low..].iter().any(|v| *v > low + 0.02), "c_p did not recover: {c:?}");
    assert!(trace.iter().all(|f| f.fault.is_none()));
}

#[tokio::test(flavor = "multi_thread")]
async fn stale_input_fades_to_zero() {
    let svc = start().await;
    let (mut ws, _) = connect(&svc).await;
    state(&mut ws).await;
    send(&mut ws, push([10.0, 0.0, 0.0])).await;
    let mut frames = Vec::new();
    loop {
        let f = state(&mut ws).await;
        let done = frames.first().is_some_and(|g: &StateFrame| f.t > g.t + 0.6);
        if f.u_h.force.x > 0.0 || !frames.is_empty() {
            frames.push(f);
        }
        if done {
            break;
        }
    }
    let t_on = frames[0].t;
    let late: Vec<_> = frames.iter().filter(|f| f.t > t_on + HOLD_S + FADE_S + 0.01).collect();
    assert!(!late.is_empty());
    assert!(late.iter().all(|f| f.u_h.force.x == 0.0));
    assert!(frames.iter().all(|f| f.u_h.force.x <= 10.0));
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn oversized_wrench_is_clamped() {
    let svc = start().await;
    let (mut ws, hello) = connect(&svc).await;
    let mut peak: f64 = 0.0;
    for _ in 0..15 {
        send(&mut ws, push([1e4, -1e4, 50.0])).await;
        let f = state(&mut ws).await;
        let n = f.u_h.force.norm();
        assert!(n <= hello.f_max + 1e-9, "{n}");
        peak = peak.max(n);
    }
    assert!((peak - hello.f_max).abs() < 1e-9, "{peak}");
    svc.shutdown().await.unwrap();
}

async fn expect_protocol_close(ws: &mut Ws) {
    loop {
        match timeout(WAIT, ws.next()).await.expect("server did not close") {
            Some(Ok(Message::Close(Some(frame)))) => {
                assert_eq!(frame.code, CloseCode::Protocol, "{frame:?}");
                return;
            }
            Some(Ok(Message::Text(_))) => continue,
            other => panic!("expected a close frame, got {other:?}"),
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_input_closes_with_protocol_error() {
    let svc = start().await;
    let bad = [
        Message::Text(r#"{"v":1,"type":"wrench","payload":{"wrench":[1,0,0,0,0,0],"gain":2}}"#.into()),
        Message::Text(r#"{"v":1,"type":"control","payload":{"action":"start"},"extra":true}"#.into()),
        Message::Text(r#"{"v":9,"type":"control","payload":{"action":"start"}}"#.into()),
        Message::Text(r#"{"v":1,"type":"warp","payload":{}}"#.into()),
        Message::Text("{".into()),
        Message::Binary(vec![1, 2, 3]),
    ];
    for m in bad {
        let (mut ws, _) = connect(&svc).await;
        ws.send(m).await.unwrap();
        expect_protocol_close(&mut ws).await;
    }
    // The session survives misbehaving clients.
    let (mut ws, _) = connect(&svc).await;
    state(&mut ws).await;
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn session_controls_and_overrides() {
    let svc = start().await;
    let (mut ws, hello) = connect(&svc).await;

    send(&mut ws, control(Action::Pause)).await;
    let mut f = state(&mut ws).await;
    while f.running {
        f = state(&mut ws).await;
    }
    let held = state(&mut ws).await.tick;
    assert_eq!(state(&mut ws).await.tick, held);

    send(
        &mut ws,
        ClientMessage::Params(ParamOverrides {
            lambda_p: Some([1e5, 60.0, 0.0]),
            d_p: Some(0.3),
            ..Default::default()
        }),
    )
    .await;
    send(&mut ws, control(Action::Start)).await;
    let mut f = state(&mut ws).await;
    while !f.running {
        f = state(&mut ws).await;
    }
    assert_eq!(f.params.lambda_p, [hello.limits.lambda_p[1], 60.0, hello.limits.lambda_p[0]]);
    assert_eq!(f.params.d_p, 0.3);
    assert!(state(&mut ws).await.tick > held);

    let mut bad = default_scenario();
    bad.start.p.x = 4.0;
    send(&mut ws, ClientMessage::SelectScenario(Box::new(SelectScenario { scenario: bad }))).await;
    loop {
        if let ServerMessage::Error(e) = recv(&mut ws).await {
            assert_eq!(e.code, "invalid_scenario");
            break;
        }
    }

    let mut other = default_scenario();
    other.name = "second".into();
    send(&mut ws, ClientMessage::SelectScenario(Box::new(SelectScenario { scenario: other }))).await;
    loop {
        if let ServerMessage::Hello(h) = recv(&mut ws).await {
            assert_eq!(h.scenario, "second");
            break;
        }
    }
    let f = state(&mut ws).await;
    assert!(f.t < 0.2, "{}", f.t);
    svc.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn occupied_port_is_a_bind_error() {
    let svc = start().await;
    let cfg = ServiceConfig {
        bind: svc.local_addr(),
        ..ServiceConfig::default()
    };
    let err = Service::start(cfg).await.err().expect("second bind must fail");
    assert!(err.to_string().contains("cannot bind"), "{err}");
    svc.shutdown().await.unwrap();
}
