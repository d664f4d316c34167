//! Python bindings: timestamp arithmetic, gate positioning, schedule
//! compilation, the trTCM meter and whole-scenario runs.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use psfp_core::meter::{Color, ColorMode, MeterAction, TrTcmConfig};
use psfp_core::scenario::{RunOptions, DEFAULT_SCALE};
use psfp_core::schedule::{HyperperiodBounds, SliceSpec, StreamGclSpec};
use psfp_core::sim::run_to_dir;
use psfp_core::time::{Timestamp48, TruncationWindow};
use psfp_core::{gate, sync, time};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn color_name(c: Color) -> &'static str {
    c.name()
}

fn parse_color(s: &str) -> PyResult<Color> {
    match s {
        "green" => Ok(Color::Green),
        "yellow" => Ok(Color::Yellow),
        "red" => Ok(Color::Red),
        _ => Err(err(format!("unknown color {s:?}"))),
    }
}

/// `(a - b) mod 2^48`.
#[pyfunction]
fn wrap_diff(a: u64, b: u64) -> u64 {
    time::wrap_diff(Timestamp48::new(a), Timestamp48::new(b))
}

/// Shortest signed distance from `b` to `a` on the 48-bit ring.
#[pyfunction]
fn signed_wrap_diff(a: u64, b: u64) -> i64 {
    time::signed_wrap_diff(Timestamp48::new(a), Timestamp48::new(b))
}

/// The 20-bit field a gate entry matches on.
#[pyfunction]
#[pyo3(signature = (t, low_bit = 11))]
fn truncate(t: u64, low_bit: u32) -> PyResult<u32> {
    Ok(TruncationWindow::new(low_bit).map_err(err)?.truncate(Timestamp48::new(t)))
}

#[pyfunction]
fn relative_position(t_i: u64, t_jh: u64, h: u64) -> PyResult<u64> {
    if h == 0 {
        return Err(err("hyperperiod must be positive"));
    }
    Ok(gate::relative_position(Timestamp48::new(t_i), Timestamp48::new(t_jh), h))
}

#[pyfunction]
fn apply_delta(t_rel: u64, delta: i64, h: u64) -> PyResult<u64> {
    if h == 0 || t_rel >= h {
        return Err(err("need 0 <= t_rel < h"));
    }
    Ok(gate::apply_delta(t_rel, gate::SignedDelta::reduce(delta, h), h))
}

#[pyfunction]
fn epsilon1(t_jh: u64, t_1h: u64, h: u64) -> PyResult<u64> {
    if h == 0 {
        return Err(err("hyperperiod must be positive"));
    }
    Ok(sync::epsilon1(Timestamp48::new(t_jh), Timestamp48::new(t_1h), h))
}

#[pyfunction]
fn epsilon2(t_1h_port: u64, t_1h_ref: u64) -> i64 {
    sync::epsilon2(Timestamp48::new(t_1h_port), Timestamp48::new(t_1h_ref))
}

/// LCM of the periods; with `low_bit` it must also fit the match window.
#[pyfunction]
#[pyo3(signature = (periods, low_bit = None))]
fn hyperperiod(periods: Vec<u64>, low_bit: Option<u32>) -> PyResult<u64> {
    let bounds = match low_bit {
        Some(b) => HyperperiodBounds::from_window(TruncationWindow::new(b).map_err(err)?),
        None => HyperperiodBounds::unbounded(),
    };
    psfp_core::schedule::hyperperiod(&periods, bounds).map_err(err)
}

/// Open entries of a stream GCL over `h`. Slices are `(duration_ns, open)`.
#[pyfunction]
fn expand(slices: Vec<(u64, bool)>, h: u64) -> PyResult<Vec<(u64, u64)>> {
    let spec = StreamGclSpec::new(
        1,
        slices.into_iter().map(|(d, open)| if open { SliceSpec::open(d) } else { SliceSpec::closed(d) }).collect(),
    );
    let entries = psfp_core::schedule::expand(&spec, h).map_err(err)?;
    Ok(entries.into_iter().map(|e| (e.start, e.end)).collect())
}

/// A two-rate three-color meter with exact integer refill.
#[pyclass]
struct FlowMeter {
    inner: psfp_core::meter::FlowMeter,
}

#[pymethods]
impl FlowMeter {
    #[new]
    #[pyo3(signature = (cir_bps, eir_bps, cbs_bytes, ebs_bytes, color_aware = false))]
    fn new(cir_bps: u64, eir_bps: u64, cbs_bytes: u64, ebs_bytes: u64, color_aware: bool) -> Self {
        let mut cfg = TrTcmConfig::new(cir_bps, eir_bps, cbs_bytes, ebs_bytes);
        cfg.color_mode = if color_aware { ColorMode::Aware } else { ColorMode::Blind };
        FlowMeter { inner: psfp_core::meter::FlowMeter::new(1, cfg) }
    }

    /// Color one frame: "green", "yellow" or "red".
    #[pyo3(signature = (size, now_ns, pre_color = "green"))]
    fn meter(&mut self, size: u32, now_ns: u64, pre_color: &str) -> PyResult<&'static str> {
        let c = self.inner.meter(size, parse_color(pre_color)?, Timestamp48::new(now_ns));
        Ok(color_name(c))
    }

    /// Color and apply the drop policies. Returns `(color, forwarded)`.
    #[pyo3(signature = (size, now_ns, dei = false))]
    fn police(&mut self, size: u32, now_ns: u64, dei: bool) -> (&'static str, bool) {
        let v = self.inner.police(size, dei, Timestamp48::new(now_ns));
        let forwarded = matches!(v.action, MeterAction::Forward | MeterAction::ForwardWithDei);
        (color_name(v.color), forwarded)
    }

    #[setter]
    fn set_drop_on_yellow(&mut self, v: bool) {
        self.inner.config_mut().drop_on_yellow = v;
    }

    #[setter]
    fn set_mark_all_red(&mut self, v: bool) {
        self.inner.config_mut().mark_all_red = v;
    }

    #[getter]
    fn blocked(&self) -> bool {
        self.inner.is_blocked()
    }

    /// Bytes currently in buckets C and E.
    #[getter]
    fn tokens(&self) -> (u64, u64) {
        let s = self.inner.state();
        (s.tokens_c_bytes(), s.tokens_e_bytes())
    }

    fn reset(&mut self) {
        self.inner.reset();
    }
}

/// A scenario file loaded from disk or text.
#[pyclass]
struct Scenario {
    inner: psfp_core::scenario::Scenario,
}

fn options(scale: u64, seed: Option<u64>, bin: Option<u64>) -> RunOptions {
    RunOptions { scale, seed, bin }
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Scenario { inner: psfp_core::scenario::Scenario::load(&path).map_err(err)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Scenario { inner: psfp_core::scenario::Scenario::parse(text).map_err(err)? })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    /// Diagnostics as strings; empty when the scenario is valid.
    #[pyo3(signature = (scale = DEFAULT_SCALE))]
    fn validate(&self, scale: u64) -> Vec<String> {
        self.inner.validate(&options(scale, None, None)).iter().map(ToString::to_string).collect()
    }

    /// The compiled gate schedule as printable text.
    fn compile_report(&self) -> PyResult<String> {
        Ok(self.inner.compile_schedule().map_err(err)?.report())
    }

    /// Run the scenario and return the summary as a dict. With `out` the
    /// CSV files and summary.json are written there too.
    #[pyo3(signature = (scale = DEFAULT_SCALE, seed = None, bin_ns = None, out = None))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        scale: u64,
        seed: Option<u64>,
        bin_ns: Option<u64>,
        out: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = options(scale, seed, bin_ns);
        let summary = match out {
            Some(dir) => {
                let setup = self.inner.compile(&opts).map_err(err)?;
                py.allow_threads(|| run_to_dir(setup, &dir)).map_err(err)?
            }
            None => py.allow_threads(|| self.inner.run(&opts)).map_err(err)?.0,
        };
        let json = serde_json::to_string(&summary).map_err(err)?;
        py.import("json")?.call_method1("loads", (json,))?.downcast_into::<PyDict>().map_err(Into::into)
    }
}

#[pymodule]
fn psfp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(wrap_diff, m)?)?;
    m.add_function(wrap_pyfunction!(signed_wrap_diff, m)?)?;
    m.add_function(wrap_pyfunction!(truncate, m)?)?;
    m.add_function(wrap_pyfunction!(relative_position, m)?)?;
    m.add_function(wrap_pyfunction!(apply_delta, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon1, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon2, m)?)?;
    m.add_function(wrap_pyfunction!(hyperperiod, m)?)?;
    m.add_function(wrap_pyfunction!(expand, m)?)?;
    m.add_class::<FlowMeter>()?;
    m.add_class::<Scenario>()?;
    Ok(())
}
