use promptseg::promptsim::{stamp_prompt, GuidanceConfig, Polarity, Prompt};
use promptseg::segnet::{Result as SegResult, Segmenter};
use promptseg::synthgen::{generate_case, PhantomConfig, Preset, Split};
use promptseg::volgrid::{mask_from_nifti_bytes, volume_to_nifti_bytes, ImageVolume, ProbabilityMap};
use promptseg_server::{rle_decode, rle_encode, AppState, PromptResponse, Rle, ServerConfig, SessionInfo};
use reqwest::StatusCode;
use serde_json::{json, Value};
use std::sync::Arc;

/// Previous mask plus positive stamps, minus negative stamps.
struct Echo(GuidanceConfig);

impl Segmenter for Echo {
    fn guidance(&self) -> &GuidanceConfig {
        &self.0
    }

    fn segment(&self, image: &ImageVolume, prompts: &[Prompt], prev: Option<&ProbabilityMap>) -> SegResult<ProbabilityMap> {
        let mut out = prev.map_or_else(|| vec![0.0; image.data().len()], |p| p.data().to_vec());
        for p in prompts {
            let v = if p.polarity == Polarity::Positive { 1.0 } else { 0.0 };
            stamp_prompt(p, image.shape(), |i| out[i] = v)?;
        }
        Ok(ProbabilityMap::new(image.geometry().clone(), out)?)
    }
}

struct Server {
    base: String,
    client: reqwest::Client,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Server {
    async fn start(cfg: ServerConfig) -> Server {
        let app = AppState::new(Arc::new(Echo(GuidanceConfig::default())), "echo", cfg).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel();
        let task = tokio::spawn(promptseg_server::serve(listener, app, async {
            let _ = rx.await;
        }));
        Server { base, client: reqwest::Client::new(), stop: Some(tx), task }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn upload(&self, bytes: Vec<u8>) -> reqwest::Response {
        self.client.post(self.url("/v1/sessions")).body(bytes).send().await.unwrap()
    }

    async fn prompt(&self, id: &str, body: Value) -> reqwest::Response {
        self.client.post(self.url(&format!("/v1/sessions/{id}/prompts"))).json(&body).send().await.unwrap()
    }

    async fn mask(&self, id: &str) -> (StatusCode, String) {
        let r = self.client.get(self.url(&format!("/v1/sessions/{id}/mask"))).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn shutdown(mut self) {
        self.stop.take().unwrap().send(()).unwrap();
        self.task.await.unwrap().unwrap();
    }
}

fn phantom() -> ImageVolume {
    generate_case(&PhantomConfig::preset(Preset::Easy, 32, 4), 0, Split::Val).unwrap().image
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_session_flow() {
    let srv = Server::start(ServerConfig::default()).await;
    let health: Value = srv.client.get(srv.url("/v1/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["status"], "ok");

    let raw = phantom();
    let info: SessionInfo = srv.upload(volume_to_nifti_bytes(&raw, true)).await.json().await.unwrap();
    let id = info.session_id.clone();
    let [d, h, w] = info.shape;
    assert_eq!(info.rounds, 0);
    assert_eq!(srv.mask(&id).await.0, StatusCode::CONFLICT);

    let (z, y, x) = (d / 2, h / 2, w / 2);
    let prompts = [
        json!({"kind": "point", "polarity": "positive", "center": [z, y, x], "radius": 2}),
        json!({"kind": "box", "polarity": "positive", "slice": z, "min": [y - 3, x - 3], "max": [y + 3, x + 3]}),
        json!({"kind": "lasso", "polarity": "positive", "slice": z + 1, "vertices": [[y - 2, x - 2], [y - 2, x + 3], [y + 3, x + 3], [y + 3, x - 2]]}),
        json!({"kind": "scribble", "polarity": "negative", "slice": z, "vertices": [[y, x - 4], [y, x + 4]], "thickness": 1}),
    ];
    let mut last = 0;
    for (i, p) in prompts.iter().enumerate() {
        let r: PromptResponse = srv.prompt(&id, p.clone()).await.json().await.unwrap();
        assert_eq!(r.round, i + 1);
        assert!(r.mask_version > last);
        last = r.mask_version;
        let (status, body) = srv.mask(&id).await;
        assert_eq!(status, StatusCode::OK);
        let rle: Rle = serde_json::from_str(&body).unwrap();
        assert_eq!(rle.shape, vec![d, h, w]);
        let data = rle_decode(&rle).unwrap();
        assert_eq!(serde_json::to_string(&rle_encode(&[d, h, w], &data)).unwrap(), body);
    }
    let final_rle = srv.mask(&id).await.1;

    let slice: Rle = srv
        .client
        .get(srv.url(&format!("/v1/sessions/{id}/mask?slice={z}")))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(slice.shape, vec![h, w]);

    let png = srv.client.get(srv.url(&format!("/v1/sessions/{id}/slice/{z}?window=-2,2"))).send().await.unwrap();
    assert_eq!(png.headers()["content-type"], "image/png");
    assert_eq!(&png.bytes().await.unwrap()[1..4], b"PNG");

    let exported = srv.client.get(srv.url(&format!("/v1/sessions/{id}/export"))).send().await.unwrap().bytes().await.unwrap();
    let mask = mask_from_nifti_bytes(&exported).unwrap();
    assert_eq!(mask.shape(), raw.shape());
    assert!(mask.count() > 0);

    let transcript: Value = srv.client.get(srv.url(&format!("/v1/sessions/{id}/transcript"))).send().await.unwrap().json().await.unwrap();
    let rounds = transcript["rounds"].as_array().unwrap();
    assert_eq!(rounds.len(), 4);

    let replay: SessionInfo = srv.upload(volume_to_nifti_bytes(&raw, false)).await.json().await.unwrap();
    for round in rounds {
        for p in round.as_array().unwrap() {
            assert_eq!(srv.prompt(&replay.session_id, p.clone()).await.status(), StatusCode::OK);
        }
    }
    assert_eq!(srv.mask(&replay.session_id).await.1, final_rle);

    for expect in [3, 2, 1, 0] {
        let r: Value = srv.client.post(srv.url(&format!("/v1/sessions/{id}/undo"))).send().await.unwrap().json().await.unwrap();
        assert_eq!(r["round"], expect);
    }
    let r = srv.client.post(srv.url(&format!("/v1/sessions/{id}/undo"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let info: SessionInfo = srv.client.get(srv.url(&format!("/v1/sessions/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(info.rounds, 0);

    let del = srv.client.delete(srv.url(&format!("/v1/sessions/{id}"))).send().await.unwrap();
    assert_eq!(del.status(), StatusCode::NO_CONTENT);
    assert_eq!(srv.mask(&id).await.0, StatusCode::NOT_FOUND);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_requests() {
    let srv = Server::start(ServerConfig::default()).await;
    assert_eq!(srv.upload(b"not a volume".to_vec()).await.status(), StatusCode::BAD_REQUEST);
    let info: SessionInfo = srv.upload(volume_to_nifti_bytes(&phantom(), false)).await.json().await.unwrap();
    let id = info.session_id;
    let [d, ..] = info.shape;
    let cases = [
        json!({"kind": "point", "polarity": "positive", "center": [d + 5, 0, 0], "radius": 1}),
        json!({"kind": "point", "polarity": "positive", "center": [1, 1, 1], "radius": 9}),
        json!({"kind": "box", "polarity": "positive", "slice": 1, "min": [5, 5], "max": [5, 9]}),
        json!({"kind": "lasso", "polarity": "positive", "slice": 1, "vertices": [[0, 0], [4, 4], [0, 4], [4, 0]]}),
        json!({"kind": "point", "polarity": "sideways", "center": [1, 1, 1], "radius": 1}),
        json!({"kind": "point", "polarity": "positive", "center": [1, 1, 1], "radius": 1, "slice": 2}),
    ];
    for c in cases {
        assert_eq!(srv.prompt(&id, c.clone()).await.status(), StatusCode::UNPROCESSABLE_ENTITY, "{c}");
    }
    let info: SessionInfo = srv.client.get(srv.url(&format!("/v1/sessions/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(info.rounds, 0);
    assert_eq!(srv.mask("not-a-uuid").await.0, StatusCode::NOT_FOUND);
    let r = srv.client.get(srv.url(&format!("/v1/sessions/{id}/slice/{d}"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let r = srv.client.get(srv.url(&format!("/v1/sessions/{id}/slice/0?window=3,1"))).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let ui = srv.client.get(srv.url("/ui")).send().await.unwrap();
    assert_eq!(ui.status(), StatusCode::NOT_FOUND);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn least_recently_used_session_is_evicted() {
    let srv = Server::start(ServerConfig { capacity: 2, ..Default::default() }).await;
    let bytes = volume_to_nifti_bytes(&phantom(), false);
    let mut ids = Vec::new();
    for _ in 0..3 {
        let info: SessionInfo = srv.upload(bytes.clone()).await.json().await.unwrap();
        ids.push(info.session_id);
    }
    let status = |id: String| {
        let c = srv.client.clone();
        let u = srv.url(&format!("/v1/sessions/{id}"));
        async move { c.get(u).send().await.unwrap().status() }
    };
    assert_eq!(status(ids[0].clone()).await, StatusCode::NOT_FOUND);
    assert_eq!(status(ids[1].clone()).await, StatusCode::OK);
    assert_eq!(status(ids[2].clone()).await, StatusCode::OK);
    let health: Value = srv.client.get(srv.url("/v1/health")).send().await.unwrap().json().await.unwrap();
    assert_eq!(health["sessions"], 2);
    srv.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_ui_directory_when_configured() {
    let dir = std::env::temp_dir().join(format!("promptseg-ui-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "<html>ok</html>").unwrap();
    let srv = Server::start(ServerConfig { ui_dir: Some(dir.clone()), ..Default::default() }).await;
    let r = srv.client.get(srv.url("/ui/index.html")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert_eq!(r.text().await.unwrap(), "<html>ok</html>");
    srv.shutdown().await;
    std::fs::remove_dir_all(dir).unwrap();
}
