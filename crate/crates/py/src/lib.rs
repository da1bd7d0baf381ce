//! Python bindings. Tensors cross the boundary as flat float lists plus a
//! shape; compressed data as `bytes` of concatenated 64-byte blocks.

use half::f16;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use ecco_core::codec2x::{self, CompressedBlock2x};
use ecco_core::codec4x::{self, CompressedBlock4x};
use ecco_core::format::{decode_meta, encode_meta};
use ecco_core::metrics::{self, SymbolHistogram};
use ecco_core::{EccoError, Fp8Code, RoundingMode, TensorF16};

fn err(e: EccoError) -> PyErr {
    match e {
        EccoError::Io(m) => PyIOError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor(values: &[f64], rows: usize, cols: usize) -> PyResult<TensorF16> {
    TensorF16::new(rows, cols, values.iter().map(|&v| f16::from_f64(v)).collect()).map_err(err)
}

fn floats(values: &[f16]) -> Vec<f64> {
    values.iter().map(|v| v.to_f64()).collect()
}

fn blocks_of(data: &[u8]) -> PyResult<Vec<[u8; 64]>> {
    if data.len() % 64 != 0 {
        return Err(PyValueError::new_err(format!("{} bytes is not a whole number of 64-byte blocks", data.len())));
    }
    Ok(data.chunks_exact(64).map(|c| c.try_into().unwrap()).collect())
}

fn rounding(mode: &str) -> PyResult<RoundingMode> {
    match mode {
        "nearest" => Ok(RoundingMode::NearestEven),
        "zero" => Ok(RoundingMode::TowardZero),
        "away" => Ok(RoundingMode::AwayFromZero),
        m => Err(PyValueError::new_err(format!("unknown rounding mode {m:?} (nearest, zero, away)"))),
    }
}

/// Quantizes to an E4M3 code.
#[pyfunction]
#[pyo3(signature = (x, mode = "nearest"))]
fn fp8_quantize(x: f64, mode: &str) -> PyResult<u8> {
    ecco_core::fp8_quantize(x, rounding(mode)?).map(|c| c.0).map_err(err)
}

#[pyfunction]
fn fp8_dequantize(code: u8) -> PyResult<f64> {
    ecco_core::fp8_dequantize(Fp8Code(code)).map_err(err)
}

/// Calibrated per-tensor metadata.
#[pyclass(name = "Meta", module = "ecco", from_py_object)]
#[derive(Clone)]
struct PyMeta {
    inner: ecco_core::TensorMeta,
}

#[pymethods]
impl PyMeta {
    #[getter]
    fn s(&self) -> usize {
        self.inner.s()
    }

    #[getter]
    fn h(&self) -> usize {
        self.inner.h
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            ecco_core::Mode::Weight => "weight",
            ecco_core::Mode::Kv => "kv",
        }
    }

    #[getter]
    fn s_t_exponent(&self) -> i32 {
        self.inner.s_t.exponent
    }

    /// The shared patterns, 15 ascending centroids each.
    fn patterns(&self) -> Vec<Vec<f32>> {
        self.inner.library.patterns.iter().map(|p| p.centroids().to_vec()).collect()
    }

    fn code_lengths(&self, pattern: usize, codebook: usize) -> PyResult<Vec<u8>> {
        self.inner
            .codebooks
            .get(pattern)
            .and_then(|row| row.get(codebook))
            .map(|b| b.lengths().to_vec())
            .ok_or_else(|| PyValueError::new_err("codebook index out of range"))
    }

    /// Serialized ECCM bytes.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &encode_meta(&self.inner))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: decode_meta(data).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Meta(S={}, H={}, mode={:?}, s_t=2^{})", self.s(), self.h(), self.mode(), self.s_t_exponent())
    }
}

/// Fits shared patterns and codebooks to a `rows x cols` tensor.
#[pyfunction]
#[pyo3(signature = (values, rows, cols, s = None, h = 4, seed = 0, mode = "weight", pattern_index_coding = "fixed", weights = None))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    s: Option<usize>,
    h: usize,
    seed: u64,
    mode: &str,
    pattern_index_coding: &str,
    weights: Option<Vec<f64>>,
) -> PyResult<PyMeta> {
    let t = tensor(&values, rows, cols)?;
    let base = match mode {
        "weight" => ecco_core::Config::default(),
        "kv" => ecco_core::Config::kv(),
        m => return Err(PyValueError::new_err(format!("unknown mode {m:?} (weight, kv)"))),
    };
    let s = s.unwrap_or(base.s);
    let mut cfg = base.with_sh(s, h).with_seed(seed);
    cfg.pattern_index_coding = match pattern_index_coding {
        "fixed" => ecco_core::PatternIndexCoding::Fixed,
        "huffman" => ecco_core::PatternIndexCoding::Huffman,
        c => return Err(PyValueError::new_err(format!("unknown pattern index coding {c:?}"))),
    };
    cfg.importance_weights = weights;
    Ok(PyMeta {
        inner: ecco_core::calibrate(&t, &cfg).map_err(err)?,
    })
}

/// Compresses at 4x. Returns the block bytes and one log dict per group.
#[pyfunction]
fn compress_4x<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    meta: &PyMeta,
) -> PyResult<(Bound<'py, PyBytes>, Vec<Bound<'py, PyDict>>)> {
    let t = tensor(&values, rows, cols)?;
    let (blocks, logs) = codec4x::compress_tensor(&t, &meta.inner).map_err(err)?;
    let bytes: Vec<u8> = blocks.iter().flat_map(|b| b.0).collect();
    let dicts = logs
        .iter()
        .map(|l| {
            let d = PyDict::new(py);
            d.set_item("group", l.group)?;
            d.set_item("id_kp", l.id_kp)?;
            d.set_item("id_hf", l.id_hf)?;
            d.set_item("coded_len", l.coded_len)?;
            d.set_item("n_clipped", l.n_clipped)?;
            d.set_item("n_padded", l.n_padded)?;
            d.set_item("hist", l.hist.to_vec())?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyBytes::new(py, &bytes), dicts))
}

/// Decompresses 4x blocks with the `reference` or `parallel` decoder.
#[pyfunction]
#[pyo3(signature = (data, rows, cols, meta, decoder = "reference"))]
fn decompress_4x(data: &[u8], rows: usize, cols: usize, meta: &PyMeta, decoder: &str) -> PyResult<Vec<f64>> {
    let kind = match decoder {
        "reference" => ecco_core::DecoderKind::Reference,
        "parallel" => ecco_core::DecoderKind::Parallel,
        d => return Err(PyValueError::new_err(format!("unknown decoder {d:?}"))),
    };
    let blocks: Vec<CompressedBlock4x> = blocks_of(data)?.into_iter().map(CompressedBlock4x).collect();
    let t = codec4x::decompress_tensor(&blocks, &meta.inner, kind, rows, cols).map_err(err)?;
    Ok(floats(t.values()))
}

#[pyfunction]
fn compress_2x<'py>(py: Python<'py>, values: Vec<f64>, rows: usize, cols: usize) -> PyResult<Bound<'py, PyBytes>> {
    let t = tensor(&values, rows, cols)?;
    let blocks = codec2x::compress_tensor_2x(&t).map_err(err)?;
    let bytes: Vec<u8> = blocks.iter().flat_map(|b| b.0).collect();
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn decompress_2x(data: &[u8], rows: usize, cols: usize) -> PyResult<Vec<f64>> {
    let blocks: Vec<CompressedBlock2x> = blocks_of(data)?.into_iter().map(CompressedBlock2x).collect();
    let (t, _) = codec2x::decompress_tensor_2x(&blocks, rows, cols).map_err(err)?;
    Ok(floats(t.values()))
}

/// Shannon entropy of a histogram, in bits.
#[pyfunction]
fn entropy(counts: Vec<u64>) -> PyResult<f64> {
    metrics::entropy(&SymbolHistogram::new(counts)).map_err(err)
}

#[pyfunction]
fn bit_efficiency(entropy_bits: f64, b_real: f64) -> PyResult<f64> {
    metrics::bit_efficiency(entropy_bits, b_real).map_err(err)
}

/// Per-group and mean MSE of a 4x round trip.
#[pyfunction]
fn roundtrip_mse(values: Vec<f64>, rows: usize, cols: usize, meta: &PyMeta) -> PyResult<(Vec<f64>, f64)> {
    let t = tensor(&values, rows, cols)?;
    let r = codec4x::roundtrip_mse(&t, &meta.inner).map_err(err)?;
    Ok((r.per_group, r.mean))
}

#[pymodule]
fn ecco(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMeta>()?;
    m.add_function(wrap_pyfunction!(fp8_quantize, m)?)?;
    m.add_function(wrap_pyfunction!(fp8_dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(compress_4x, m)?)?;
    m.add_function(wrap_pyfunction!(decompress_4x, m)?)?;
    m.add_function(wrap_pyfunction!(compress_2x, m)?)?;
    m.add_function(wrap_pyfunction!(decompress_2x, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(bit_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(roundtrip_mse, m)?)?;
    Ok(())
}
