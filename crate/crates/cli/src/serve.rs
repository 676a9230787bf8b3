//! Newline-delimited JSON scoring service.
//!
//! Every input line that is not empty or all spaces and tabs produces exactly
//! one response line. Lines that are not valid requests get an error
//! response, keyed by the request's `id` when one can be read and by the
//! synthetic id `line:<n>` (1-based) otherwise.
//! Responses are written in completion order, not input order.

use std::io::{self, BufRead, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use crossbeam_channel::bounded;
use lrk_core::layout::parse_document;
use lrk_core::reward::{
    rlaf_breakdown, vra_total_with, ConstantJudge, FormatCheck, RewardBreakdown, RewardWeights, ScoreTable,
};
use lrk_core::LayoutDocument;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::deep_merge;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Vra,
    Rlaf,
}

/// `pred` and an inline `gt` may each be JSON text or an embedded object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub id: String,
    pub pred: Value,
    #[serde(default)]
    pub gt: Option<Value>,
    #[serde(default)]
    pub gt_path: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub weights: Option<Map<String, Value>>,
    #[serde(default)]
    pub aes_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub schema_version: u32,
    pub id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl ScoreResponse {
    fn failure(id: String, error: String) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id,
            ok: false,
            breakdown: None,
            error: Some(error),
            diagnostics: Vec::new(),
        }
    }
}

/// Shared, read-only state for scoring.
#[derive(Debug, Clone, Default)]
pub struct ServeContext {
    pub weights: RewardWeights,
    pub format_check: FormatCheck,
    /// Aesthetic scores for RLAF requests that carry no `aes_score`.
    pub scores: Option<ScoreTable>,
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ServeContext {
    fn resolve_gt(&self, req: &ScoreRequest) -> Result<LayoutDocument, String> {
        let text = match (&req.gt, &req.gt_path) {
            (Some(_), Some(_)) => return Err("give either gt or gt_path, not both".into()),
            (None, None) => return Err("gt or gt_path is required".into()),
            (Some(v), None) => as_text(v),
            (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| format!("gt_path {}: {e}", p.display()))?,
        };
        let gt = parse_document(&text).map_err(|e| format!("ground truth: {e}"))?;
        gt.validate().map_err(|e| format!("ground truth: {e}"))?;
        Ok(gt)
    }

    fn weights_for(&self, req: &ScoreRequest) -> Result<RewardWeights, String> {
        let Some(overrides) = &req.weights else {
            return Ok(self.weights);
        };
        let mut merged = serde_json::to_value(self.weights).expect("weights serialize");
        deep_merge(&mut merged, Value::Object(overrides.clone()));
        serde_json::from_value(merged).map_err(|e| format!("weights: {e}"))
    }

    /// Scores one parsed request.
    pub fn score(&self, req: &ScoreRequest) -> ScoreResponse {
        match self.try_score(req) {
            Ok(mut breakdown) => {
                let diagnostics = std::mem::take(&mut breakdown.diagnostics);
                ScoreResponse {
                    schema_version: SCHEMA_VERSION,
                    id: req.id.clone(),
                    ok: true,
                    breakdown: Some(breakdown),
                    error: None,
                    diagnostics,
                }
            }
            Err(e) => ScoreResponse::failure(req.id.clone(), e),
        }
    }

    fn try_score(&self, req: &ScoreRequest) -> Result<RewardBreakdown, String> {
        if let Some(v) = req.schema_version {
            if v != SCHEMA_VERSION {
                return Err(format!(
                    "unsupported schema_version {v}, this server speaks {SCHEMA_VERSION}"
                ));
            }
        }
        let weights = self.weights_for(req)?;
        let pred = as_text(&req.pred);
        match req.mode {
            Mode::Vra => {
                let gt = self.resolve_gt(req)?;
                vra_total_with(&pred, &gt, &weights, self.format_check).map_err(|e| e.to_string())
            }
            Mode::Rlaf => {
                let result = match (req.aes_score, &self.scores) {
                    (Some(s), _) => rlaf_breakdown(&pred, &req.id, &ConstantJudge(s), &weights, self.format_check),
                    (None, Some(table)) => rlaf_breakdown(&pred, &req.id, table, &weights, self.format_check),
                    (None, None) => return Err("rlaf mode needs aes_score or a server score file".into()),
                };
                result.map_err(|e| e.to_string())
            }
        }
    }

    /// Turns one raw input line into exactly one response.
    pub fn handle_line(&self, line_no: usize, raw: &[u8]) -> ScoreResponse {
        let synthetic = || format!("line:{line_no}");
        let text = match std::str::from_utf8(raw) {
            Ok(t) => t,
            Err(e) => return ScoreResponse::failure(synthetic(), format!("malformed request: {e}")),
        };
        let value: Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(e) => return ScoreResponse::failure(synthetic(), format!("malformed request: {e}")),
        };
        let id = match value.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return ScoreResponse::failure(synthetic(), "malformed request: id must be a string".into()),
            None => return ScoreResponse::failure(synthetic(), "malformed request: missing id".into()),
        };
        let req: ScoreRequest = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => return ScoreResponse::failure(id, format!("malformed request: {e}")),
        };
        match catch_unwind(AssertUnwindSafe(|| self.score(&req))) {
            Ok(resp) => resp,
            Err(_) => ScoreResponse::failure(id, "internal error while scoring".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeStats {
    pub requests: usize,
    pub responses: usize,
}

fn trim_line_end(buf: &mut Vec<u8>) {
    while matches!(buf.last(), Some(b'\n' | b'\r')) {
        buf.pop();
    }
}

/// Serves requests from `reader` until end of input, using `workers` threads.
///
/// Lines holding only spaces and tabs are skipped. Returns once every request
/// has been answered, or with the first read or write error.
pub fn serve_lines<R, W>(mut reader: R, mut writer: W, ctx: &ServeContext, workers: usize) -> io::Result<ServeStats>
where
    R: BufRead + Send,
    W: Write,
{
    let workers = workers.max(1);
    let (job_tx, job_rx) = bounded::<(usize, Vec<u8>)>(workers * 4);
    let (out_tx, out_rx) = bounded::<String>(workers * 4);

    std::thread::scope(|s| {
        let reader_thread = s.spawn(move || -> io::Result<usize> {
            let mut requests = 0;
            let mut line_no = 0;
            loop {
                let mut buf = Vec::new();
                if reader.read_until(b'\n', &mut buf)? == 0 {
                    return Ok(requests);
                }
                line_no += 1;
                trim_line_end(&mut buf);
                if buf.iter().all(|b| matches!(b, b' ' | b'\t')) {
                    continue;
                }
                requests += 1;
                if job_tx.send((line_no, buf)).is_err() {
                    return Ok(requests);
                }
            }
        });

        for _ in 0..workers {
            let rx = job_rx.clone();
            let tx = out_tx.clone();
            s.spawn(move || {
                for (line_no, raw) in rx {
                    let resp = ctx.handle_line(line_no, &raw);
                    let line = serde_json::to_string(&resp).expect("responses serialize");
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
        }
        drop(job_rx);
        drop(out_tx);

        let mut responses = 0;
        let mut write_result = Ok(());
        for line in &out_rx {
            let step = writer.write_all(line.as_bytes()).and_then(|_| writer.write_all(b"\n"));
            let step = step.and_then(|_| if out_rx.is_empty() { writer.flush() } else { Ok(()) });
            if let Err(e) = step {
                write_result = Err(e);
                break;
            }
            responses += 1;
        }
        drop(out_rx);
        write_result?;
        writer.flush()?;
        let requests = reader_thread.join().expect("reader thread panicked")?;
        Ok(ServeStats { requests, responses })
    })
}

/// Accepts TCP connections on `listener`, serving each one on its own thread.
/// Returns only if accepting fails.
pub fn serve_tcp(listener: std::net::TcpListener, ctx: &ServeContext, workers: usize) -> io::Result<()> {
    std::thread::scope(|s| {
        for stream in listener.incoming() {
            let stream = stream?;
            s.spawn(move || {
                let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                let result = stream
                    .try_clone()
                    .and_then(|read_half| serve_lines(io::BufReader::new(read_half), &stream, ctx, workers));
                match result {
                    Ok(stats) => eprintln!("connection {peer} closed after {} responses", stats.responses),
                    Err(e) => eprintln!("connection {peer} failed: {e}"),
                }
            });
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lrk_core::geometry::BBox;
    use lrk_core::layout::{serialize_document, Category, LayerRecord};

    fn gt() -> LayoutDocument {
        let layers = vec![
            LayerRecord::new("title", Category::Text, BBox::new(10.0, 10.0, 80.0, 20.0).unwrap(), 0),
            LayerRecord::new(
                "bg",
                Category::Background,
                BBox::new(0.0, 0.0, 100.0, 100.0).unwrap(),
                1,
            ),
        ];
        LayoutDocument::new(100.0, 100.0, layers).unwrap()
    }

    fn request(id: &str) -> String {
        let doc = serialize_document(&gt());
        serde_json::json!({"id": id, "pred": doc, "gt": doc}).to_string()
    }

    fn run(input: &str, workers: usize) -> Vec<ScoreResponse> {
        let mut out = Vec::new();
        serve_lines(input.as_bytes(), &mut out, &ServeContext::default(), workers).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn perfect_prediction_scores_thirty() {
        let resp = run(&request("a"), 1);
        assert_eq!(resp.len(), 1);
        assert!(resp[0].ok, "{:?}", resp[0].error);
        assert!((resp[0].breakdown.as_ref().unwrap().total - 30.0).abs() < 1e-9);
        assert_eq!(resp[0].id, "a");
    }

    #[test]
    fn malformed_lines_get_synthetic_ids() {
        let input = format!("{{\n\n{}\n{{\"pred\": 1}}\n{{\"id\": 7}}\n", request("ok"));
        let mut resp = run(&input, 3);
        resp.sort_by(|a, b| a.id.cmp(&b.id));
        let ids: Vec<&str> = resp.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["line:1", "line:4", "line:5", "ok"]);
        assert!(resp[..3].iter().all(|r| !r.ok && r.error.is_some()));
    }

    #[test]
    fn invalid_fields_keep_the_request_id() {
        let doc = serialize_document(&gt());
        let line = serde_json::json!({"id": "x", "pred": doc, "gt": doc, "mode": "bogus"}).to_string();
        let resp = run(&line, 1);
        assert_eq!(resp[0].id, "x");
        assert!(!resp[0].ok);
        let line = serde_json::json!({"id": "y", "pred": doc}).to_string();
        assert_eq!(run(&line, 1)[0].error.as_deref(), Some("gt or gt_path is required"));
        let line = serde_json::json!({"id": "z", "schema_version": 2, "pred": doc, "gt": doc}).to_string();
        assert!(run(&line, 1)[0].error.as_deref().unwrap().contains("schema_version"));
    }

    #[test]
    fn invalid_utf8_is_answered() {
        let mut out = Vec::new();
        serve_lines(&b"\xff\xfe\n"[..], &mut out, &ServeContext::default(), 1).unwrap();
        let resp: ScoreResponse = serde_json::from_slice(out.trim_ascii_end()).unwrap();
        assert_eq!(resp.id, "line:1");
    }

    #[test]
    fn rlaf_needs_a_score() {
        let doc = serialize_document(&gt());
        let line = serde_json::json!({"id": "r", "pred": doc, "mode": "rlaf", "aes_score": 4.0}).to_string();
        let resp = &run(&line, 1)[0];
        assert!(resp.ok);
        assert_eq!(resp.breakdown.as_ref().unwrap().total, 10.0 + 2.0 * 4.0);
        let line = serde_json::json!({"id": "r", "pred": doc, "mode": "rlaf"}).to_string();
        assert!(!run(&line, 1)[0].ok);
    }

    #[test]
    fn weight_overrides_apply_per_request() {
        let doc = serialize_document(&gt());
        let line = serde_json::json!({"id": "w", "pred": doc, "gt": doc, "weights": {"lambda_size": 1.0}}).to_string();
        let resp = &run(&line, 1)[0];
        assert!((resp.breakdown.as_ref().unwrap().total - 34.0).abs() < 1e-9);
        let line = serde_json::json!({"id": "w", "pred": doc, "gt": doc, "weights": {"nope": 1.0}}).to_string();
        assert!(!run(&line, 1)[0].ok);
    }

    #[test]
    fn payloads_do_not_depend_on_worker_count() {
        let input: String = (0..40)
            .map(|i| {
                if i % 7 == 0 {
                    "oops\n".to_string()
                } else {
                    request(&format!("r{i}")) + "\n"
                }
            })
            .collect();
        let key = |mut v: Vec<ScoreResponse>| {
            v.sort_by(|a, b| a.id.cmp(&b.id));
            v
        };
        assert_eq!(key(run(&input, 1)), key(run(&input, 8)));
    }
}
