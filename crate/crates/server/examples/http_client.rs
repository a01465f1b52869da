//! Starts the service in-process and drives one session over HTTP.
//!
//!     cargo run -p promptseg-server --example http_client -- [weights.psw]
//!
//! Without a weights file an untrained toy network answers, so masks are noise.

use promptseg::promptsim::{GuidanceConfig, GuidanceLayout};
use promptseg::segnet::{load_weights, ModelWeights, NetworkConfig, SlidingWindow, TrainingMetadata, UNet};
use promptseg::synthgen::{generate_case, PhantomConfig, Preset, Split};
use promptseg::volgrid::{mask_from_nifti_bytes, volume_to_nifti_bytes};
use promptseg_server::{rle_decode, AppState, PromptResponse, Rle, ServerConfig, SessionInfo};
use rand::SeedableRng;
use serde_json::{json, Value};
use std::sync::Arc;

fn untrained() -> ModelWeights {
    let net = UNet::build(&NetworkConfig::toy(GuidanceLayout::Shared)).expect("toy config is valid");
    let params = net.init_params::<f32, _>(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
    let metadata = TrainingMetadata {
        epoch: 0,
        seed: 0,
        patch_size: [32; 3],
        guidance: GuidanceConfig::default(),
        train_loss: vec![],
        val_dice: vec![],
    };
    ModelWeights { config: net.config().clone(), params, metadata }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let weights = match std::env::args().nth(1) {
        Some(p) => load_weights(p.as_ref(), None)?,
        None => untrained(),
    };
    let app = AppState::new(Arc::new(SlidingWindow::from_weights(&weights)?), weights.fingerprint(), ServerConfig::default())?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(promptseg_server::serve(listener, app, async {
        let _ = stopped.await;
    }));
    let http = reqwest::Client::new();

    let case = generate_case(&PhantomConfig::preset(Preset::Easy, 64, 5), 0, Split::Val)?;
    let info: SessionInfo = http.post(format!("{base}/v1/sessions")).body(volume_to_nifti_bytes(&case.image, true)).send().await?.json().await?;
    println!("session {} grid {:?} spacing {:?}", info.session_id, info.shape, info.spacing);
    let id = info.session_id;
    let [d, h, w] = info.shape;
    let (z, y, x) = (d / 2, h / 2, w / 2);

    for body in [
        json!({"kind": "point", "polarity": "positive", "center": [z, y, x], "radius": 2}),
        json!({"kind": "box", "polarity": "positive", "slice": z, "min": [y - 6, x - 6], "max": [y + 6, x + 6]}),
        json!({"kind": "scribble", "polarity": "negative", "slice": z, "vertices": [[y - 8, x - 8], [y - 8, x + 8]], "thickness": 1}),
    ] {
        let r: PromptResponse = http.post(format!("{base}/v1/sessions/{id}/prompts")).json(&body).send().await?.json().await?;
        let rle: Rle = http.get(format!("{base}/v1/sessions/{id}/mask")).send().await?.json().await?;
        let voxels = rle_decode(&rle)?.iter().filter(|&&v| v == 1).count();
        println!("{:<8} round {} changed {:6} voxels, mask has {voxels}", body["kind"].as_str().unwrap(), r.round, r.changed_voxels);
    }

    let png = http.get(format!("{base}/v1/sessions/{id}/slice/{z}")).send().await?.bytes().await?;
    println!("slice {z} PNG: {} bytes", png.len());
    let nii = http.get(format!("{base}/v1/sessions/{id}/export")).send().await?.bytes().await?;
    let exported = mask_from_nifti_bytes(&nii)?;
    println!("export: {:?} mask with {} voxels", exported.shape(), exported.count());
    let transcript: Value = http.get(format!("{base}/v1/sessions/{id}/transcript")).send().await?.json().await?;
    println!("transcript: {}", transcript["rounds"].as_array().map_or(0, |r| r.len()));
    let undo: Value = http.post(format!("{base}/v1/sessions/{id}/undo")).send().await?.json().await?;
    println!("undo -> {undo}");

    let _ = stop.send(());
    server.await??;
    Ok(())
}
