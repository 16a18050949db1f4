//! Built-in test models and the external-model subprocess protocol.
//!
//! Built-ins are pure functions with known analytic structure, used by the
//! validation suites. External models speak newline-delimited JSON over
//! stdin/stdout: request `{"id": k, "x": [...], "theta": t?}`, response
//! `{"id": k, "y": [...]}`, UTF-8, one record per line, ids strictly
//! increasing per connection.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// Monotone counter of model evaluations; the engine snapshots it between
/// run phases to report per-phase budgets.
#[derive(Debug, Default)]
pub struct EvaluationMeter {
    count: AtomicU64,
}

impl EvaluationMeter {
    pub fn add(&self, n: u64) {
        self.count.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// A deterministic model: given an input point (and a curve parameter for
/// functional outputs), returns exactly `output_dim` finite reals.
pub trait Model: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Curve-parameter grid for functional outputs, when the model has one.
    fn theta_grid(&self) -> Option<&[f64]> {
        None
    }

    /// Write the outputs at `x` into `out` (length `output_dim`).
    fn eval_into(&self, x: &[f64], theta: Option<f64>, out: &mut [f64]) -> Result<()>;

    fn eval(&self, x: &[f64], theta: Option<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.eval_into(x, theta, &mut out)?;
        Ok(out)
    }

    /// Batched evaluation; the external backend overrides this with one
    /// protocol round trip per chunk.
    fn eval_batch(&self, xs: &[Vec<f64>], theta: Option<f64>) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.eval(x, theta)).collect()
    }

    fn meter(&self) -> &EvaluationMeter;
}

fn check_input_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

/// Model selection as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model")]
pub enum ModelSpec {
    #[serde(rename = "quadratic3")]
    Quadratic3,
    #[serde(rename = "gsobol4")]
    GSobol4,
    #[serde(rename = "gfunction")]
    GFunction { a: Vec<f64> },
    #[serde(rename = "linear")]
    Linear { coefficients: Vec<f64> },
    #[serde(rename = "theta_toy")]
    ThetaToy,
    #[serde(rename = "external")]
    External {
        command: Vec<String>,
        d: usize,
        n_out: usize,
        #[serde(default = "default_batch")]
        batch: usize,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default)]
        theta_grid: Option<Vec<f64>>,
    },
}

fn default_batch() -> usize {
    256
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Quadratic3 => "quadratic3",
            ModelSpec::GSobol4 => "gsobol4",
            ModelSpec::GFunction { .. } => "gfunction",
            ModelSpec::Linear { .. } => "linear",
            ModelSpec::ThetaToy => "theta_toy",
            ModelSpec::External { .. } => "external",
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Model>> {
        match self {
            ModelSpec::Quadratic3 => Ok(Arc::new(Quadratic3::new())),
            ModelSpec::GSobol4 => Ok(Arc::new(GSobol4::new())),
            ModelSpec::GFunction { a } => Ok(Arc::new(GFunction::new(a.clone())?)),
            ModelSpec::Linear { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::InvalidParameter("linear model needs coefficients".into()));
                }
                Ok(Arc::new(Linear { coefficients: coefficients.clone(), meter: EvaluationMeter::default() }))
            }
            ModelSpec::ThetaToy => Ok(Arc::new(ThetaToy::new())),
            ModelSpec::External { command, d, n_out, batch, timeout_ms, theta_grid } => {
                if command.is_empty() {
                    return Err(Error::InvalidParameter("external model needs a command".into()));
                }
                if *d == 0 || *n_out == 0 || *batch == 0 {
                    return Err(Error::InvalidParameter(
                        "external model needs d >= 1, n_out >= 1, batch >= 1".into(),
                    ));
                }
                Ok(Arc::new(ExternalModel::new(
                    command.clone(),
                    *d,
                    *n_out,
                    *batch,
                    Duration::from_millis(*timeout_ms),
                    theta_grid.clone(),
                )))
            }
        }
    }
}

/// Names accepted in the `model` config field.
pub fn registered_models() -> Vec<&'static str> {
    vec!["quadratic3", "gsobol4", "gfunction", "linear", "theta_toy", "external"]
}

/// Sum of three squared inputs.
pub struct Quadratic3 {
    meter: EvaluationMeter,
}

impl Quadratic3 {
    pub fn new() -> Self {
        Quadratic3 { meter: EvaluationMeter::default() }
    }
}

impl Default for Quadratic3 {
    fn default() -> Self {
        Self::new()
    }
}

impl Model for Quadratic3 {
    fn input_dim(&self) -> usize {
        3
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, x: &[f64], _theta: Option<f64>, out: &mut [f64]) -> Result<()> {
        check_input_dim(3, x)?;
        out[0] = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        self.meter.add(1);
        Ok(())
    }
    fn meter(&self) -> &EvaluationMeter {
        &self.meter
    }
}

/// The fixed 4x10 shape matrix of the four-output product benchmark.
pub const GSOBOL4_A: [[f64; 10]; 4] = [
    [0.0, 0.0, 6.52, 6.52, 6.52, 6.52, 6.52, 6.52, 6.52, 6.52],
    [0.0, 1.0, 4.5, 9.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0],
    [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
    [50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0, 50.0],
];

/// Ten-input, four-output product benchmark with the embedded shape matrix.
pub struct GSobol4 {
    meter: EvaluationMeter,
}

impl GSobol4 {
    pub fn new() -> Self {
        GSobol4 { meter: EvaluationMeter::default() }
    }
}

impl Default for GSobol4 {
    fn default() -> Self {
        Self::new()
    }
}

impl Model for GSobol4 {
    fn input_dim(&self) -> usize {
        10
    }
    fn output_dim(&self) -> usize {
        4
    }
    fn eval_into(&self, x: &[f64], _theta: Option<f64>, out: &mut [f64]) -> Result<()> {
        check_input_dim(10, x)?;
        out[..4].fill(1.0);
        for (j, xj) in x.iter().enumerate() {
            let g = (4.0 * xj - 2.0).abs();
            for r in 0..4 {
                out[r] *= (g + GSOBOL4_A[r][j]) / (1.0 + GSOBOL4_A[r][j]);
            }
        }
        self.meter.add(1);
        Ok(())
    }
    fn meter(&self) -> &EvaluationMeter {
        &self.meter
    }
}

/// Single-output product benchmark with user-chosen shape constants and
/// closed-form variance-based indices.
pub struct GFunction {
    a: Vec<f64>,
    meter: EvaluationMeter,
}

impl GFunction {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "gfunction shape constants must be finite and >= 0".into(),
            ));
        }
        Ok(GFunction { a, meter: EvaluationMeter::default() })
    }

    /// Closed-form first-order variance shares V_j / (prod_k (1+V_k) - 1)
    /// with V_j = (1/3)/(1+a_j)^2, for inputs uniform on (0, 1).
    pub fn analytic_sobol_first_order(&self) -> Vec<f64> {
        let v: Vec<f64> = self.a.iter().map(|aj| (1.0 / 3.0) / ((1.0 + aj) * (1.0 + aj))).collect();
        let total: f64 = v.iter().map(|vj| 1.0 + vj).product::<f64>() - 1.0;
        v.iter().map(|vj| vj / total).collect()
    }

    /// Closed-form total output variance.
    pub fn analytic_total_variance(&self) -> f64 {
        self.a
            .iter()
            .map(|aj| 1.0 + (1.0 / 3.0) / ((1.0 + aj) * (1.0 + aj)))
            .product::<f64>()
            - 1.0
    }
}

impl Model for GFunction {
    fn input_dim(&self) -> usize {
        self.a.len()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, x: &[f64], _theta: Option<f64>, out: &mut [f64]) -> Result<()> {
        check_input_dim(self.a.len(), x)?;
        let mut prod = 1.0;
        for (xj, aj) in x.iter().zip(&self.a) {
            prod *= ((4.0 * xj - 2.0).abs() + aj) / (1.0 + aj);
        }
        out[0] = prod;
        self.meter.add(1);
        Ok(())
    }
    fn meter(&self) -> &EvaluationMeter {
        &self.meter
    }
}

/// Weighted sum of the inputs.
pub struct Linear {
    coefficients: Vec<f64>,
    meter: EvaluationMeter,
}

impl Model for Linear {
    fn input_dim(&self) -> usize {
        self.coefficients.len()
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, x: &[f64], _theta: Option<f64>, out: &mut [f64]) -> Result<()> {
        check_input_dim(self.coefficients.len(), x)?;
        out[0] = x.iter().zip(&self.coefficients).map(|(xi, ci)| xi * ci).sum();
        self.meter.add(1);
        Ok(())
    }
    fn meter(&self) -> &EvaluationMeter {
        &self.meter
    }
}

const THETA_TOY_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Two-input functional toy M(x, theta) = theta x1 + (1 - theta) x2 over a
/// fixed five-point curve grid; evaluation requires a theta.
pub struct ThetaToy {
    meter: EvaluationMeter,
}

impl ThetaToy {
    pub fn new() -> Self {
        ThetaToy { meter: EvaluationMeter::default() }
    }
}

impl Default for ThetaToy {
    fn default() -> Self {
        Self::new()
    }
}

impl Model for ThetaToy {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn theta_grid(&self) -> Option<&[f64]> {
        Some(&THETA_TOY_GRID)
    }
    fn eval_into(&self, x: &[f64], theta: Option<f64>, out: &mut [f64]) -> Result<()> {
        check_input_dim(2, x)?;
        let t = theta.ok_or_else(|| Error::InvalidParameter(
            "theta_toy evaluation requires a curve parameter".into(),
        ))?;
        out[0] = t * x[0] + (1.0 - t) * x[1];
        self.meter.add(1);
        Ok(())
    }
    fn meter(&self) -> &EvaluationMeter {
        &self.meter
    }
}

// ---------------------------------------------------------------------------
// External subprocess backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    x: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    y: Vec<f64>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Running {
    fn spawn(command: &[String]) -> Result<Running> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = std::sync::mpsc::channel();
        // The reader thread owns stdout; it exits when the pipe closes or the
        // receiver is dropped, so no join handle is needed.
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Running { child, stdin, lines: rx })
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct ProcState {
    running: Option<Running>,
    next_id: u64,
}

/// Deterministic simulation code reached over the NDJSON protocol. One
/// subprocess per model instance; at most one outstanding batch (calls
/// serialize on an internal lock). A crashed subprocess is restarted once
/// per batch and the unanswered requests are resent; duplicate responses by
/// id are suppressed.
pub struct ExternalModel {
    command: Vec<String>,
    input_dim: usize,
    output_dim: usize,
    batch_size: usize,
    timeout: Duration,
    theta_grid: Option<Vec<f64>>,
    state: Mutex<ProcState>,
    meter: EvaluationMeter,
}

impl ExternalModel {
    pub fn new(
        command: Vec<String>,
        input_dim: usize,
        output_dim: usize,
        batch_size: usize,
        timeout: Duration,
        theta_grid: Option<Vec<f64>>,
    ) -> Self {
        ExternalModel {
            command,
            input_dim,
            output_dim,
            batch_size,
            timeout,
            theta_grid,
            state: Mutex::new(ProcState { running: None, next_id: 0 }),
            meter: EvaluationMeter::default(),
        }
    }

    fn send_requests(
        running: &mut Running,
        ids: &[u64],
        xs: &[Vec<f64>],
        base_id: u64,
        theta: Option<f64>,
        answered: &std::collections::HashMap<u64, Vec<f64>>,
    ) -> std::io::Result<()> {
        let mut payload = String::new();
        for id in ids {
            if answered.contains_key(id) {
                continue;
            }
            let x = &xs[(id - base_id) as usize];
            let req = Request { id: *id, x, theta };
            payload.push_str(&serde_json::to_string(&req).expect("serializable request"));
            payload.push('\n');
        }
        running.stdin.write_all(payload.as_bytes())?;
        running.stdin.flush()
    }

    fn run_chunk(
        &self,
        state: &mut ProcState,
        xs: &[Vec<f64>],
        theta: Option<f64>,
    ) -> Result<Vec<Vec<f64>>> {
        let base_id = state.next_id;
        let ids: Vec<u64> = (0..xs.len() as u64).map(|i| base_id + i).collect();
        state.next_id += xs.len() as u64;

        let mut answered: std::collections::HashMap<u64, Vec<f64>> = std::collections::HashMap::new();
        let mut restarts_left = 1u8;

        if state.running.is_none() {
            state.running = Some(Running::spawn(&self.command)?);
        }
        let mut need_send = true;
        while answered.len() < ids.len() {
            let running = state.running.as_mut().expect("spawned above");
            let mut crashed = false;
            if need_send {
                crashed = Self::send_requests(running, &ids, xs, base_id, theta, &answered).is_err();
                need_send = false;
            }
            while !crashed && answered.len() < ids.len() {
                match running.lines.recv_timeout(self.timeout) {
                    Ok(Ok(line)) => {
                        let resp: Response = serde_json::from_str(&line).map_err(|e| Error::Protocol {
                            id: *ids.first().expect("nonempty chunk"),
                            message: format!("malformed response line: {e}"),
                        })?;
                        if !ids.contains(&resp.id) {
                            return Err(Error::Protocol {
                                id: resp.id,
                                message: "response id was never requested".into(),
                            });
                        }
                        if resp.y.len() != self.output_dim || resp.y.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Protocol {
                                id: resp.id,
                                message: format!(
                                    "expected {} finite outputs, got {:?}",
                                    self.output_dim, resp.y
                                ),
                            });
                        }
                        // At-most-once: a late duplicate after a restart is dropped.
                        answered.entry(resp.id).or_insert(resp.y);
                    }
                    Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => {
                        crashed = true;
                    }
                    Err(RecvTimeoutError::Timeout) => {
                        let first_unanswered =
                            *ids.iter().find(|id| !answered.contains_key(id)).expect("incomplete");
                        running.kill();
                        state.running = None;
                        return Err(Error::Timeout(first_unanswered));
                    }
                }
            }
            if crashed && answered.len() < ids.len() {
                running.kill();
                state.running = None;
                if restarts_left == 0 {
                    return Err(Error::SubprocessExit(format!(
                        "subprocess exited again after one restart with {} of {} requests unanswered",
                        ids.len() - answered.len(),
                        ids.len()
                    )));
                }
                restarts_left -= 1;
                state.running = Some(Running::spawn(&self.command)?);
                need_send = true;
            }
        }
        self.meter.add(xs.len() as u64);
        Ok(ids.iter().map(|id| answered.remove(id).expect("all answered")).collect())
    }
}

impl Model for ExternalModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn theta_grid(&self) -> Option<&[f64]> {
        self.theta_grid.as_deref()
    }
    fn eval_into(&self, x: &[f64], theta: Option<f64>, out: &mut [f64]) -> Result<()> {
        check_input_dim(self.input_dim, x)?;
        let batch = self.eval_batch(std::slice::from_ref(&x.to_vec()), theta)?;
        out.copy_from_slice(&batch[0]);
        Ok(())
    }
    fn eval_batch(&self, xs: &[Vec<f64>], theta: Option<f64>) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            check_input_dim(self.input_dim, x)?;
        }
        let mut state = self.state.lock().expect("external model lock");
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(self.batch_size) {
            out.extend(self.run_chunk(&mut state, chunk, theta)?);
        }
        Ok(out)
    }
    fn meter(&self) -> &EvaluationMeter {
        &self.meter
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(mut state) = self.state.lock() {
            if let Some(running) = state.running.as_mut() {
                running.kill();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;

    #[test]
    fn quadratic3_known_point() {
        let m = ModelSpec::Quadratic3.build().unwrap();
        assert_eq!(m.eval(&[1.0, 1.0, 1.0], None).unwrap(), vec![3.0]);
        assert!(m.eval(&[1.0, 1.0], None).is_err());
    }

    #[test]
    fn gsobol4_center_point_outputs() {
        let m = ModelSpec::GSobol4.build().unwrap();
        let y = m.eval(&[0.5; 10], None).unwrap();
        assert_eq!(y[0], 0.0, "first shape constant is 0 and |4x-2| = 0");
        let want = (50.0f64 / 51.0).powi(10);
        assert!((y[3] - want).abs() < 1e-15);
        assert!((y[3] - 0.8203).abs() < 5e-5);
    }

    #[test]
    fn gsobol4_shape_matrix_checksums() {
        let plain: f64 = GSOBOL4_A.iter().flatten().sum();
        assert!((plain - 1215.66).abs() < 1e-9, "plain sum {plain}");
        let mut weighted = 0.0;
        for (r, row) in GSOBOL4_A.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                weighted += (r + 1) as f64 * (j + 1) as f64 * v;
            }
        }
        assert!((weighted - 21507.04).abs() < 1e-8, "weighted sum {weighted}");
    }

    #[test]
    fn builtin_evaluation_is_bitwise_deterministic() {
        let m = ModelSpec::GSobol4.build().unwrap();
        let mut rng = StreamKey::root(31).rng();
        for _ in 0..100 {
            let x: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
            assert_eq!(m.eval(&x, None).unwrap(), m.eval(&x, None).unwrap());
        }
    }

    #[test]
    fn gfunction_analytic_indices_match_pick_freeze_estimates() {
        let a = vec![0.0, 1.0, 4.5, 9.0, 99.0, 99.0, 99.0, 99.0, 99.0, 99.0];
        let gf = GFunction::new(a.clone()).unwrap();
        let analytic = gf.analytic_sobol_first_order();
        let n = 100_000usize;
        let d = a.len();
        let mut rng = StreamKey::root(32).rng();
        let base: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let shadow: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = base.iter().map(|x| gf.eval(x, None).unwrap()[0]).collect();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        for j in 0..d {
            // Pick-freeze: share coordinate j between the two panels.
            let mut cross = 0.0;
            for i in 0..n {
                let mut xj = shadow[i].clone();
                xj[j] = base[i][j];
                cross += y[i] * gf.eval(&xj, None).unwrap()[0];
            }
            let est = (cross / n as f64 - mean * mean) / var;
            assert!(
                (est - analytic[j]).abs() < 0.02,
                "j={j}: pick-freeze {est} vs analytic {}",
                analytic[j]
            );
        }
        assert!((gf.analytic_total_variance() - var).abs() < 0.01);
    }

    #[test]
    fn linear_model_and_meter() {
        let m = ModelSpec::Linear { coefficients: vec![2.0, -1.0, 0.5] }.build().unwrap();
        assert_eq!(m.eval(&[1.0, 2.0, 4.0], None).unwrap(), vec![2.0]);
        let before = m.meter().snapshot();
        m.eval(&[0.0, 0.0, 0.0], None).unwrap();
        m.eval(&[1.0, 1.0, 1.0], None).unwrap();
        assert_eq!(m.meter().snapshot(), before + 2);
    }

    #[test]
    fn theta_toy_requires_theta_and_exposes_grid() {
        let m = ModelSpec::ThetaToy.build().unwrap();
        assert!(m.eval(&[1.0, 2.0], None).is_err());
        assert_eq!(m.eval(&[1.0, 2.0], Some(0.25)).unwrap(), vec![0.25 + 1.5]);
        assert_eq!(m.theta_grid().unwrap().len(), 5);
    }

    #[test]
    fn model_spec_config_tags_round_trip() {
        let spec = ModelSpec::GFunction { a: vec![0.0, 1.0] };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"model":"gfunction","a":[0.0,1.0]}"#);
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
        let ext: ModelSpec = serde_json::from_str(
            r#"{"model":"external","command":["echo"],"d":2,"n_out":1}"#,
        )
        .unwrap();
        match &ext {
            ModelSpec::External { batch, timeout_ms, .. } => {
                assert_eq!(*batch, 256);
                assert_eq!(*timeout_ms, 30_000);
            }
            other => panic!("unexpected spec {other:?}"),
        }
    }

    fn python_echo_model(batch: usize, timeout_ms: u64) -> ExternalModel {
        let script = concat!(
            "import sys, json\n",
            "for line in sys.stdin:\n",
            "    r = json.loads(line)\n",
            "    print(json.dumps({'id': r['id'], 'y': r['x']}), flush=True)\n",
        );
        ExternalModel::new(
            vec!["python3".into(), "-c".into(), script.into()],
            2,
            2,
            batch,
            Duration::from_millis(timeout_ms),
            None,
        )
    }

    #[test]
    fn external_identity_echo() {
        let m = python_echo_model(256, 20_000);
        let y = m.eval(&[0.1, 0.2], None).unwrap();
        assert_eq!(y, vec![0.1, 0.2]);
    }

    #[test]
    fn external_batch_preserves_order() {
        let m = python_echo_model(16, 20_000);
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, -(i as f64)]).collect();
        let ys = m.eval_batch(&xs, None).unwrap();
        assert_eq!(ys.len(), 100);
        for (i, y) in ys.iter().enumerate() {
            assert_eq!(y, &vec![i as f64, -(i as f64)]);
        }
        assert_eq!(m.meter().snapshot(), 100);
    }

    #[test]
    fn external_hang_reports_timeout_with_first_unanswered_id() {
        let script = concat!(
            "import sys, json, time\n",
            "n = 0\n",
            "for line in sys.stdin:\n",
            "    r = json.loads(line)\n",
            "    if n >= 3:\n",
            "        time.sleep(3600)\n",
            "    print(json.dumps({'id': r['id'], 'y': r['x']}), flush=True)\n",
            "    n += 1\n",
        );
        let m = ExternalModel::new(
            vec!["python3".into(), "-c".into(), script.into()],
            1,
            1,
            64,
            Duration::from_millis(500),
            None,
        );
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        match m.eval_batch(&xs, None) {
            Err(Error::Timeout(id)) => assert_eq!(id, 3, "first unanswered request id"),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn external_crash_restarts_once_and_completes() {
        let dir = tempfile::tempdir().unwrap();
        let flag = dir.path().join("crashed-once");
        let script = concat!(
            "import sys, json, os\n",
            "flag = sys.argv[1]\n",
            "first = not os.path.exists(flag)\n",
            "open(flag, 'w').close()\n",
            "for line in sys.stdin:\n",
            "    r = json.loads(line)\n",
            "    if first and r['id'] >= 1:\n",
            "        sys.exit(1)\n",
            "    print(json.dumps({'id': r['id'], 'y': r['x']}), flush=True)\n",
        );
        let m = ExternalModel::new(
            vec![
                "python3".into(),
                "-c".into(),
                script.into(),
                flag.to_str().unwrap().into(),
            ],
            1,
            1,
            64,
            Duration::from_millis(20_000),
            None,
        );
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 10.0]).collect();
        let ys = m.eval_batch(&xs, None).unwrap();
        for (i, y) in ys.iter().enumerate() {
            assert_eq!(y, &vec![i as f64 * 10.0]);
        }
    }

    #[test]
    fn external_repeated_crash_is_an_error() {
        let script = "import sys; sys.exit(1)\n";
        let m = ExternalModel::new(
            vec!["python3".into(), "-c".into(), script.into()],
            1,
            1,
            8,
            Duration::from_millis(20_000),
            None,
        );
        match m.eval_batch(&[vec![1.0]], None) {
            Err(Error::SubprocessExit(_)) => {}
            other => panic!("expected subprocess-exit error, got {other:?}"),
        }
    }
}
