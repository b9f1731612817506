//! C ABI over `crctc-core`.
//!
//! Every fallible function returns a [`CrctcStatus`]. On failure a message is
//! stored per thread and can be read with [`crctc_last_error_message`] until
//! the next failing call on the same thread. Handles are opaque and must be
//! released with their matching `_free` function. All matrices are row-major
//! `frames × width` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use crctc_core::consistency::{total_loss_from_logits, CrConfig, TargetMode};
use crctc_core::decode::prefix_beam_decode;
use crctc_core::smooth::{smooth_lattice, sr_total_loss_from_logits};
use crctc_core::{
    ctc_grad, ctc_loss, greedy_decode, peak_stats, softmax_rows, DistributionLattice, Error, LabelSequence,
    LogitLattice, Matrix, SrConfig, Vocabulary,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrctcStatus {
    Ok = 0,
    InvalidInput = 1,
    Capacity = 2,
    Infeasible = 3,
    Parse = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrctcTargetMode {
    StopGradient = 0,
    FlowGradient = 1,
}

/// Peak statistics of one lattice.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CrctcPeakStats {
    pub mean_nonblank_duration: f64,
    pub mean_blank_emit_prob: f64,
    pub mean_nonblank_emit_prob: f64,
    pub emissions: usize,
    pub nonblank_frames: usize,
    pub blank_frames: usize,
}

/// Opaque token inventory.
pub struct CrctcVocab(Vocabulary);

/// Opaque per-frame distribution over the extended vocabulary.
pub struct CrctcLattice(DistributionLattice);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CrctcStatus {
    match e {
        Error::InvalidInput(_) | Error::Json(_) => CrctcStatus::InvalidInput,
        Error::Capacity(_) => CrctcStatus::Capacity,
        Error::Infeasible(_) => CrctcStatus::Infeasible,
        Error::Parse { .. } => CrctcStatus::Parse,
        Error::Io(_) => CrctcStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CrctcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrctcStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CrctcStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            CrctcStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn as_mut_slice<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn checked_len(frames: usize, width: usize) -> Result<usize, Fail> {
    frames
        .checked_mul(width)
        .ok_or_else(|| Fail::Core(Error::Capacity(format!("{frames} x {width} overflows"))))
}

unsafe fn read_matrix(data: *const f64, frames: usize, width: usize, what: &'static str) -> Result<Matrix, Fail> {
    let n = checked_len(frames, width)?;
    let values = as_slice(data, n, what)?.to_vec();
    Ok(Matrix::from_vec(frames, width, values))
}

unsafe fn read_labels(labels: *const usize, len: usize) -> Result<LabelSequence, Fail> {
    Ok(LabelSequence(as_slice(labels, len, "labels")?.to_vec()))
}

unsafe fn write_matrix(m: &Matrix, out: *mut f64, what: &'static str) -> Result<(), Fail> {
    as_mut_slice(out, m.as_slice().len(), what)?.copy_from_slice(m.as_slice());
    Ok(())
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn crctc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crctc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Vocabulary of `size` tokens named `a`, `b`, ... with the blank at index 0.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crctc_vocab_synthetic(size: usize, out: *mut *mut CrctcVocab) -> CrctcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(CrctcVocab(Vocabulary::synthetic(size))));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn crctc_vocab_free(vocab: *mut CrctcVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Builds a lattice by applying a row-wise softmax to `logits`.
///
/// # Safety
/// `logits` must hold `frames * width` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn crctc_lattice_from_logits(
    logits: *const f64,
    frames: usize,
    width: usize,
    out: *mut *mut CrctcLattice,
) -> CrctcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = read_matrix(logits, frames, width, "logits")?;
        let lattice = softmax_rows(&LogitLattice::new(m)?);
        *out = Box::into_raw(Box::new(CrctcLattice(lattice)));
        Ok(())
    })
}

/// Builds a lattice from probabilities; each row must sum to 1.
///
/// # Safety
/// `probs` must hold `frames * width` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn crctc_lattice_from_probs(
    probs: *const f64,
    frames: usize,
    width: usize,
    out: *mut *mut CrctcLattice,
) -> CrctcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = read_matrix(probs, frames, width, "probs")?;
        *out = Box::into_raw(Box::new(CrctcLattice(DistributionLattice::from_probs(m)?)));
        Ok(())
    })
}

/// # Safety
/// `lattice` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn crctc_lattice_free(lattice: *mut CrctcLattice) {
    if !lattice.is_null() {
        drop(Box::from_raw(lattice));
    }
}

/// Frame count; 0 for NULL.
///
/// # Safety
/// `lattice` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn crctc_lattice_frames(lattice: *const CrctcLattice) -> usize {
    lattice.as_ref().map_or(0, |l| l.0.frames())
}

/// Symbols per frame; 0 for NULL.
///
/// # Safety
/// `lattice` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn crctc_lattice_width(lattice: *const CrctcLattice) -> usize {
    lattice.as_ref().map_or(0, |l| l.0.width())
}

/// Copies the probabilities into `out` (`frames * width` values).
///
/// # Safety
/// `out` must have room for `frames * width` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_lattice_probs(lattice: *const CrctcLattice, out: *mut f64) -> CrctcStatus {
    guard(|| write_matrix(as_ref(lattice, "lattice")?.0.probs(), out, "out"))
}

/// Negative log-likelihood of `labels` (indices into the non-blank tokens).
///
/// # Safety
/// Pointers must be valid; `labels` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_ctc_loss(
    lattice: *const CrctcLattice,
    vocab: *const CrctcVocab,
    labels: *const usize,
    len: usize,
    loss: *mut f64,
) -> CrctcStatus {
    guard(|| {
        let (z, v) = (&as_ref(lattice, "lattice")?.0, &as_ref(vocab, "vocab")?.0);
        let y = read_labels(labels, len)?;
        *out_ptr(loss, "loss")? = ctc_loss(z, &y, v)?.loss;
        Ok(())
    })
}

/// CTC loss and its gradient with respect to the logits.
///
/// # Safety
/// `logits` and `grad` must hold `frames * width` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_ctc_grad(
    logits: *const f64,
    frames: usize,
    width: usize,
    vocab: *const CrctcVocab,
    labels: *const usize,
    len: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> CrctcStatus {
    guard(|| {
        let v = &as_ref(vocab, "vocab")?.0;
        let m = LogitLattice::new(read_matrix(logits, frames, width, "logits")?)?;
        let out = ctc_grad(&m, &read_labels(labels, len)?, v)?;
        write_matrix(&out.grad, grad, "grad")?;
        *out_ptr(loss, "loss")? = out.loss;
        Ok(())
    })
}

/// Two-branch objective `1/2 (CTC_a + CTC_b) + alpha * CR` over all frames.
/// `masks_a`/`masks_b` flag time-masked frames (nonzero = masked) and may be
/// NULL for "nothing masked".
///
/// # Safety
/// Logit and gradient arrays must hold `frames * width` values; non-NULL
/// masks must hold `frames` bytes.
#[no_mangle]
pub unsafe extern "C" fn crctc_cr_loss(
    logits_a: *const f64,
    logits_b: *const f64,
    masks_a: *const u8,
    masks_b: *const u8,
    frames: usize,
    width: usize,
    vocab: *const CrctcVocab,
    labels: *const usize,
    len: usize,
    alpha: f64,
    target_mode: CrctcTargetMode,
    loss: *mut f64,
    grad_a: *mut f64,
    grad_b: *mut f64,
) -> CrctcStatus {
    guard(|| {
        let v = &as_ref(vocab, "vocab")?.0;
        let la = LogitLattice::new(read_matrix(logits_a, frames, width, "logits_a")?)?;
        let lb = LogitLattice::new(read_matrix(logits_b, frames, width, "logits_b")?)?;
        let mask = |p: *const u8| -> Result<Vec<bool>, Fail> {
            if p.is_null() {
                Ok(vec![false; frames])
            } else {
                Ok(as_slice(p, frames, "mask")?.iter().map(|&b| b != 0).collect())
            }
        };
        let cfg = CrConfig {
            alpha,
            target_mode: match target_mode {
                CrctcTargetMode::StopGradient => TargetMode::StopGradient,
                CrctcTargetMode::FlowGradient => TargetMode::FlowGradient,
            },
            ..CrConfig::default()
        };
        let out = total_loss_from_logits(&la, &lb, &mask(masks_a)?, &mask(masks_b)?, &read_labels(labels, len)?, v, &cfg)?;
        write_matrix(&out.grad_a, grad_a, "grad_a")?;
        write_matrix(&out.grad_b, grad_b, "grad_b")?;
        *out_ptr(loss, "loss")? = out.loss;
        Ok(())
    })
}

/// `CTC + beta * smoothness penalty` with the default kernel.
///
/// # Safety
/// `logits` and `grad` must hold `frames * width` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_sr_loss(
    logits: *const f64,
    frames: usize,
    width: usize,
    vocab: *const CrctcVocab,
    labels: *const usize,
    len: usize,
    beta: f64,
    loss: *mut f64,
    grad: *mut f64,
) -> CrctcStatus {
    guard(|| {
        let v = &as_ref(vocab, "vocab")?.0;
        let m = LogitLattice::new(read_matrix(logits, frames, width, "logits")?)?;
        let cfg = SrConfig { beta, ..SrConfig::default() };
        cfg.validate()?;
        let out = sr_total_loss_from_logits(&m, &read_labels(labels, len)?, v, &cfg)?;
        write_matrix(&out.grad, grad, "grad")?;
        *out_ptr(loss, "loss")? = out.loss;
        Ok(())
    })
}

/// Writes the temporally smoothed probabilities (default kernel) to `out`.
///
/// # Safety
/// `out` must have room for `frames * width` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_smooth(lattice: *const CrctcLattice, out: *mut f64) -> CrctcStatus {
    guard(|| {
        let s = smooth_lattice(&as_ref(lattice, "lattice")?.0, &SrConfig::default())?;
        write_matrix(s.probs(), out, "out")
    })
}

unsafe fn write_labels(labels: &LabelSequence, out: *mut usize, capacity: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out_ptr(out_len, "out_len")? = labels.len();
    if labels.len() > capacity {
        return Err(Fail::Core(Error::Capacity(format!(
            "decoded {} labels into a buffer of {capacity}",
            labels.len()
        ))));
    }
    as_mut_slice(out, labels.len(), "out")?.copy_from_slice(labels.as_slice());
    Ok(())
}

/// Best-path decoding. `*out_len` receives the label count even when the
/// buffer is too small (status `CAPACITY`).
///
/// # Safety
/// `out` must have room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_decode_greedy(
    lattice: *const CrctcLattice,
    vocab: *const CrctcVocab,
    out: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> CrctcStatus {
    guard(|| {
        let (labels, _) = greedy_decode(&as_ref(lattice, "lattice")?.0, &as_ref(vocab, "vocab")?.0)?;
        write_labels(&labels, out, capacity, out_len)
    })
}

/// Prefix beam search; same buffer contract as [`crctc_decode_greedy`].
///
/// # Safety
/// `out` must have room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn crctc_decode_prefix(
    lattice: *const CrctcLattice,
    vocab: *const CrctcVocab,
    beam: usize,
    out: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> CrctcStatus {
    guard(|| {
        let labels = prefix_beam_decode(&as_ref(lattice, "lattice")?.0, &as_ref(vocab, "vocab")?.0, beam)?;
        write_labels(&labels, out, capacity, out_len)
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn crctc_peak_stats(
    lattice: *const CrctcLattice,
    vocab: *const CrctcVocab,
    out: *mut CrctcPeakStats,
) -> CrctcStatus {
    guard(|| {
        let s = peak_stats(&as_ref(lattice, "lattice")?.0, &as_ref(vocab, "vocab")?.0)?;
        *out_ptr(out, "out")? = CrctcPeakStats {
            mean_nonblank_duration: s.mean_nonblank_duration,
            mean_blank_emit_prob: s.mean_blank_emit_prob,
            mean_nonblank_emit_prob: s.mean_nonblank_emit_prob,
            emissions: s.emissions,
            nonblank_frames: s.nonblank_frames,
            blank_frames: s.blank_frames,
        };
        Ok(())
    })
}
