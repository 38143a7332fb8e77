//! Subprocess adapters: any of the four ports can be served by an external
//! program speaking JSON lines on stdin/stdout.
//!
//! The adapter writes one JSON request object per line and expects exactly
//! one JSON response object per line. Requests carry an `op` discriminator;
//! a response is either the op's payload or `{"error": "..."}`. The child
//! is spawned once per port and kept alive for the whole run, so it may
//! hold model state; it should exit when stdin closes.
//!
//! Payload shapes (all arrays row-major, channels outermost for latents):
//!
//! ```text
//! complete         {"op":"complete","prompt":s}                  -> {"reply":s}
//! ask              {"op":"ask","question":s,"image":I}           -> {"reply":s}
//! score            {"op":"score","text":s,"image":I}             -> {"score":f}
//! canvas           {"op":"canvas"}                               -> {"width":u,"height":u}
//! channels         {"op":"channels"}                             -> {"channels":u}
//! init_latent      {"op":"init_latent","seed":u,"stage":u}       -> {"latent":L}
//! step             {"op":"step","latent":L,"t":u,"text":s}       -> {"latent":L}
//! attention        {"op":"attention","latent":L,"t":u,"text":s}  -> {"blocks":[B...]}
//! energy_gradient  {"op":"energy_gradient","latent":L,"t":u,"text":s,
//!                   "bbox":{"x":u,"y":u,"w":u,"h":u},"token":u,
//!                   "blocks":"near_middle"}                      -> {"gradient":[f...]}
//! decode           {"op":"decode","latent":L,"text":s}           -> {"image":I}
//!
//! L = {"channels":u,"width":u,"height":u,"stage":u,"timestep":u,"values":[f...]}
//! B = {"class":"near_input"|"near_middle"|"near_output","width":u,"height":u,
//!      "tokens":u,"values":[f...]}   values indexed [cell * tokens + token]
//! I = {"luma":G,"token_planes":[[word,G]...]}   G = {"width":u,"height":u,"values":[f...]}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use easel_core::geometry::{BBox, Canvas};
use easel_core::latent::{
    AttentionMaps, BlockAttention, BlockClass, DecodedImage, Grid, LatentState,
};
use easel_core::ports::{DenoiserPort, PortError, ScorerPort, TextCompletionPort, VlmPort};
use serde::{Deserialize, Serialize};

pub struct CmdChild {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    describe: String,
}

impl CmdChild {
    pub fn spawn(argv: &[String]) -> Result<Self> {
        let Some((program, args)) = argv.split_first() else {
            bail!("cmd: spec needs a program name");
        };
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("spawning {program:?}"))?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout was piped"));
        Ok(CmdChild {
            child,
            stdin,
            stdout,
            describe: argv.join(" "),
        })
    }

    fn call_value(&mut self, request: &serde_json::Value) -> Result<serde_json::Value, PortError> {
        let backend = |why: String| PortError::Backend(format!("[{}] {why}", self.describe));
        let mut line = serde_json::to_string(request).map_err(|e| backend(e.to_string()))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|()| self.stdin.flush())
            .map_err(|e| backend(format!("writing request: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| backend(format!("reading response: {e}")))?;
        if n == 0 {
            return Err(backend(String::from("process closed stdout")));
        }
        let value: serde_json::Value =
            serde_json::from_str(reply.trim_end()).map_err(|e| backend(format!("bad response: {e}")))?;
        if let Some(err) = value.get("error").and_then(|v| v.as_str()) {
            return Err(backend(err.to_string()));
        }
        Ok(value)
    }

    fn call<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &mut self,
        request: &Req,
    ) -> Result<Resp, PortError> {
        let value = serde_json::to_value(request)
            .map_err(|e| PortError::Backend(format!("[{}] {e}", self.describe)))?;
        let reply = self.call_value(&value)?;
        serde_json::from_value(reply)
            .map_err(|e| PortError::Backend(format!("[{}] malformed payload: {e}", self.describe)))
    }
}

impl Drop for CmdChild {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Serialize, Deserialize)]
struct GridWire {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl GridWire {
    fn pack(grid: &Grid) -> Self {
        GridWire {
            width: grid.width(),
            height: grid.height(),
            values: grid.data().to_vec(),
        }
    }

    fn unpack(self) -> Result<Grid, PortError> {
        if self.values.len() != self.width as usize * self.height as usize {
            return Err(PortError::Backend(String::from(
                "grid payload length disagrees with its dimensions",
            )));
        }
        Ok(Grid::from_vec(self.width, self.height, self.values))
    }
}

#[derive(Serialize, Deserialize)]
struct LatentWire {
    channels: u32,
    width: u32,
    height: u32,
    stage: u32,
    timestep: u32,
    values: Vec<f64>,
}

impl LatentWire {
    fn pack(latent: &LatentState) -> Self {
        LatentWire {
            channels: latent.channels(),
            width: latent.canvas().width,
            height: latent.canvas().height,
            stage: latent.stage,
            timestep: latent.timestep,
            values: latent.values().to_vec(),
        }
    }

    fn unpack(self) -> Result<LatentState, PortError> {
        let cells = self.channels as usize * self.width as usize * self.height as usize;
        if self.values.len() != cells {
            return Err(PortError::Backend(String::from(
                "latent payload length disagrees with its dimensions",
            )));
        }
        let mut latent = LatentState::from_vec(
            self.channels,
            Canvas::new(self.width, self.height),
            self.values,
        );
        latent.stage = self.stage;
        latent.timestep = self.timestep;
        Ok(latent)
    }
}

#[derive(Serialize, Deserialize)]
struct ImageWire {
    luma: GridWire,
    token_planes: Vec<(String, GridWire)>,
}

impl ImageWire {
    fn pack(image: &DecodedImage) -> Self {
        ImageWire {
            luma: GridWire::pack(&image.luma),
            token_planes: image
                .token_planes
                .iter()
                .map(|(word, grid)| (word.clone(), GridWire::pack(grid)))
                .collect(),
        }
    }

    fn unpack(self) -> Result<DecodedImage, PortError> {
        let mut token_planes = Vec::with_capacity(self.token_planes.len());
        for (word, grid) in self.token_planes {
            token_planes.push((word, grid.unpack()?));
        }
        Ok(DecodedImage {
            luma: self.luma.unpack()?,
            token_planes,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BlockWire {
    class: BlockClass,
    width: u32,
    height: u32,
    tokens: u32,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct BBoxWire {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

#[derive(Deserialize)]
struct ReplyResp {
    reply: String,
}

#[derive(Deserialize)]
struct ScoreResp {
    score: f64,
}

#[derive(Deserialize)]
struct CanvasResp {
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct ChannelsResp {
    channels: u32,
}

#[derive(Deserialize)]
struct LatentResp {
    latent: LatentWire,
}

#[derive(Deserialize)]
struct BlocksResp {
    blocks: Vec<BlockWire>,
}

#[derive(Deserialize)]
struct GradientResp {
    gradient: Vec<f64>,
}

#[derive(Deserialize)]
struct ImageResp {
    image: ImageWire,
}

pub struct CmdText(CmdChild);

impl CmdText {
    pub fn new(argv: &[String]) -> Result<Self> {
        Ok(CmdText(CmdChild::spawn(argv)?))
    }
}

impl TextCompletionPort for CmdText {
    fn complete(&mut self, prompt: &str) -> Result<String, PortError> {
        let resp: ReplyResp = self.0.call(&serde_json::json!({
            "op": "complete",
            "prompt": prompt,
        }))?;
        Ok(resp.reply)
    }
}

pub struct CmdVlm(CmdChild);

impl CmdVlm {
    pub fn new(argv: &[String]) -> Result<Self> {
        Ok(CmdVlm(CmdChild::spawn(argv)?))
    }
}

impl VlmPort for CmdVlm {
    fn ask(&mut self, image: &DecodedImage, question: &str) -> Result<String, PortError> {
        let resp: ReplyResp = self.0.call(&serde_json::json!({
            "op": "ask",
            "question": question,
            "image": ImageWire::pack(image),
        }))?;
        Ok(resp.reply)
    }
}

pub struct CmdScorer(Mutex<CmdChild>);

impl CmdScorer {
    pub fn new(argv: &[String]) -> Result<Self> {
        Ok(CmdScorer(Mutex::new(CmdChild::spawn(argv)?)))
    }
}

impl ScorerPort for CmdScorer {
    fn score(&self, image: &DecodedImage, text: &str) -> Result<f64, PortError> {
        let mut child = self.0.lock().expect("scorer child lock");
        let resp: ScoreResp = child.call(&serde_json::json!({
            "op": "score",
            "text": text,
            "image": ImageWire::pack(image),
        }))?;
        Ok(resp.score)
    }
}

pub struct CmdDenoiser {
    child: Mutex<CmdChild>,
    canvas: Canvas,
    channels: u32,
}

impl CmdDenoiser {
    /// Spawns the backend and performs the canvas/channels handshake.
    pub fn new(argv: &[String]) -> Result<Self> {
        let mut child = CmdChild::spawn(argv)?;
        let canvas: CanvasResp = child
            .call(&serde_json::json!({"op": "canvas"}))
            .map_err(|e| anyhow::anyhow!("canvas handshake failed: {e}"))?;
        let channels: ChannelsResp = child
            .call(&serde_json::json!({"op": "channels"}))
            .map_err(|e| anyhow::anyhow!("channels handshake failed: {e}"))?;
        if canvas.width == 0 || canvas.height == 0 || channels.channels == 0 {
            bail!("backend reported a degenerate latent shape");
        }
        Ok(CmdDenoiser {
            child: Mutex::new(child),
            canvas: Canvas::new(canvas.width, canvas.height),
            channels: channels.channels,
        })
    }

    fn locked(&self) -> std::sync::MutexGuard<'_, CmdChild> {
        self.child.lock().expect("denoiser child lock")
    }
}

impl DenoiserPort for CmdDenoiser {
    fn canvas(&self) -> Canvas {
        self.canvas
    }

    fn channels(&self) -> u32 {
        self.channels
    }

    fn init_latent(&self, seed: u64, stage: u32) -> LatentState {
        // The port contract has no error channel here; a backend that cannot
        // even draw a starting latent is unusable, so fail loudly.
        let resp: LatentResp = self
            .locked()
            .call(&serde_json::json!({"op": "init_latent", "seed": seed, "stage": stage}))
            .unwrap_or_else(|e| panic!("backend failed to produce an initial latent: {e}"));
        resp.latent
            .unpack()
            .unwrap_or_else(|e| panic!("backend returned a malformed initial latent: {e}"))
    }

    fn step(&self, latent: &LatentState, t: u32, text: &str) -> Result<LatentState, PortError> {
        let resp: LatentResp = self.locked().call(&serde_json::json!({
            "op": "step",
            "latent": LatentWire::pack(latent),
            "t": t,
            "text": text,
        }))?;
        resp.latent.unpack()
    }

    fn attention(
        &self,
        latent: &LatentState,
        t: u32,
        text: &str,
    ) -> Result<AttentionMaps, PortError> {
        let resp: BlocksResp = self.locked().call(&serde_json::json!({
            "op": "attention",
            "latent": LatentWire::pack(latent),
            "t": t,
            "text": text,
        }))?;
        let mut blocks = Vec::with_capacity(resp.blocks.len());
        for b in resp.blocks {
            let expected = b.width as usize * b.height as usize * b.tokens as usize;
            if b.values.len() != expected {
                return Err(PortError::Backend(String::from(
                    "attention payload length disagrees with its dimensions",
                )));
            }
            blocks.push(BlockAttention::new(
                b.class, b.width, b.height, b.tokens, b.values,
            ));
        }
        Ok(AttentionMaps { blocks })
    }

    fn energy_gradient(
        &self,
        latent: &LatentState,
        t: u32,
        text: &str,
        bbox: &BBox,
        token: u32,
        blocks: BlockClass,
    ) -> Result<Vec<f64>, PortError> {
        let resp: GradientResp = self.locked().call(&serde_json::json!({
            "op": "energy_gradient",
            "latent": LatentWire::pack(latent),
            "t": t,
            "text": text,
            "bbox": BBoxWire { x: bbox.x, y: bbox.y, w: bbox.w, h: bbox.h },
            "token": token,
            "blocks": blocks,
        }))?;
        if resp.gradient.len() != latent.values().len() {
            return Err(PortError::Backend(String::from(
                "gradient payload length disagrees with the latent",
            )));
        }
        Ok(resp.gradient)
    }

    fn decode(&self, latent: &LatentState, text: &str) -> Result<DecodedImage, PortError> {
        let resp: ImageResp = self.locked().call(&serde_json::json!({
            "op": "decode",
            "latent": LatentWire::pack(latent),
            "text": text,
        }))?;
        resp.image.unpack()
    }
}
