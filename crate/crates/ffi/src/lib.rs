//! C ABI over `facadewin`.
//!
//! Every fallible call returns an [`FwStatus`]; on failure the message is
//! available from [`fw_last_error`] on the same thread. Strings returned
//! through out-pointers are owned by the caller and must be released with
//! [`fw_string_free`]. Evaluators are opaque handles created with
//! [`fw_evaluator_new`] and released with [`fw_evaluator_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use facadewin::eval::{evaluate, ApInterpolation, EvalOptions};
use facadewin::planner::{self, LossWeights};
use facadewin::{tuner, BBox, BinaryMask, Detection, Error, EvalMode, WindowAnnotation};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    DimensionMismatch = 5,
    TooSmall = 6,
    Utf8Error = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FwEvalMode {
    Box = 0,
    Mask = 1,
}

/// Half-open pixel box `[x, x + w) × [y, y + h)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FwBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwDetection {
    /// Caller-chosen image key; NMS only compares detections with equal keys.
    pub image: u64,
    pub bbox: FwBox,
    pub score: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FwReport {
    pub recall: f64,
    pub precision: f64,
    pub ap50: f64,
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

/// Accumulates ground truth and detections for one evaluation run.
pub struct FwEvaluator {
    gts: Vec<WindowAnnotation>,
    dets: Vec<Detection>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<Vec<u8>>) {
    let msg = CString::new(msg).unwrap_or_else(|_| c"error message contained NUL".to_owned());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> FwStatus {
    match e {
        Error::Xml { .. } | Error::Json(_) | Error::InvalidRle { .. } => FwStatus::ParseError,
        Error::Io { .. } | Error::Image(_) => FwStatus::IoError,
        Error::DimensionMismatch { .. } | Error::NotSquare { .. } => FwStatus::DimensionMismatch,
        Error::ImageTooSmall { .. } | Error::ObjectsTooSmall(_) => FwStatus::TooSmall,
        _ => FwStatus::InvalidArgument,
    }
}

struct Failure(FwStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FwStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FwStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            FwStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(FwStatus::Utf8Error, format!("{what}: {e}")))
}

unsafe fn read_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn to_bbox(b: &FwBox) -> Result<BBox, Failure> {
    Ok(BBox::new(b.x, b.y, b.w, b.h)?)
}

fn to_weights(p: *const f64, what: &str) -> Result<LossWeights, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller provides five readable doubles.
    let a: [f64; 5] = unsafe { ptr::read(p as *const [f64; 5]) };
    Ok(LossWeights::from_array(a))
}

unsafe fn read_mask(width: u32, height: u32, bits: *const u8) -> Result<BinaryMask, Failure> {
    if bits.is_null() {
        return Err(null("mask"));
    }
    let n = width as usize * height as usize;
    let raw = std::slice::from_raw_parts(bits, n);
    Ok(BinaryMask::from_bitmap(
        width,
        height,
        raw.iter().map(|&b| b != 0).collect(),
    )?)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fw_iou_box(a: *const FwBox, b: *const FwBox, out: *mut f64) -> FwStatus {
    guard(|| {
        let a = to_bbox(read_ref(a, "a")?)?;
        let b = to_bbox(read_ref(b, "b")?)?;
        write_out(out, facadewin::iou_box(&a, &b), "out")
    })
}

/// Deepest stage `k` in `1..=5` keeping `object_width / 2^k > 3` px.
///
/// # Safety
/// `out_k` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fw_plan_depth(object_width: f64, out_k: *mut u32) -> FwStatus {
    guard(|| write_out(out_k, planner::plan_depth(object_width)?, "out_k"))
}

/// Scales five loss weights to unit sum.
///
/// # Safety
/// `weights` and `out` must each point to five doubles.
#[no_mangle]
pub unsafe extern "C" fn fw_normalize_weights(weights: *const f64, out: *mut f64) -> FwStatus {
    guard(|| {
        let n = planner::normalize_weights(&to_weights(weights, "weights")?)?;
        write_out(out as *mut [f64; 5], n.to_array(), "out")
    })
}

/// # Safety
/// `weights` and `losses` must each point to five doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fw_combine_losses(weights: *const f64, losses: *const f64, out: *mut f64) -> FwStatus {
    guard(|| {
        let k = to_weights(weights, "weights")?;
        let l = to_weights(losses, "losses")?.to_array();
        write_out(out, planner::combine_losses(&k, &l), "out")
    })
}

/// Parses a CityGML document and returns the texture manifest as JSON in
/// `*out_json` (free with [`fw_string_free`]).
///
/// # Safety
/// `document` must be a NUL-terminated string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fw_citygml_parse(document: *const c_char, out_json: *mut *mut c_char) -> FwStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let doc = read_str(document, "document")?;
        let parsed = facadewin::citygml::parse_citygml(doc)?;
        let json = facadewin::citygml::manifest_to_json(&parsed.entries)?;
        let s = CString::new(json).map_err(|e| Failure(FwStatus::InvalidArgument, e.to_string()))?;
        out_json.write(s.into_raw());
        Ok(())
    })
}

/// Greedy per-image NMS. Writes the kept input indices, ascending, to
/// `out_keep` (capacity `n`) and their count to `out_len`.
///
/// # Safety
/// `dets` must point to `n` detections (may be NULL when `n == 0`),
/// `out_keep` to room for `n` indices, `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fw_nms(
    dets: *const FwDetection,
    n: usize,
    iou_threshold: f64,
    out_keep: *mut usize,
    out_len: *mut usize,
) -> FwStatus {
    guard(|| {
        if n > 0 && (dets.is_null() || out_keep.is_null()) {
            return Err(null("dets or out_keep"));
        }
        let raw = if n == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(dets, n)
        };
        let converted = raw
            .iter()
            .map(|d| Ok(Detection::boxed(d.image.to_string(), to_bbox(&d.bbox)?, d.score)))
            .collect::<Result<Vec<_>, Failure>>()?;
        let keep = tuner::nms_indices(&converted, iou_threshold);
        if !keep.is_empty() {
            ptr::copy_nonoverlapping(keep.as_ptr(), out_keep, keep.len());
        }
        write_out(out_len, keep.len(), "out_len")
    })
}

/// Creates an empty evaluator, or NULL on allocation failure.
#[no_mangle]
pub extern "C" fn fw_evaluator_new() -> *mut FwEvaluator {
    Box::into_raw(Box::new(FwEvaluator {
        gts: Vec::new(),
        dets: Vec::new(),
    }))
}

/// # Safety
/// `ev` must be NULL or a handle from [`fw_evaluator_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fw_evaluator_free(ev: *mut FwEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// Adds a ground-truth window filling `bbox` on a `width`×`height` image.
///
/// # Safety
/// `ev` must be a live handle; `image_id` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fw_evaluator_add_gt(
    ev: *mut FwEvaluator,
    image_id: *const c_char,
    width: u32,
    height: u32,
    bbox: FwBox,
) -> FwStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| null("evaluator"))?;
        let gt = WindowAnnotation::from_box(read_str(image_id, "image_id")?, width, height, to_bbox(&bbox)?)?;
        ev.gts.push(gt);
        Ok(())
    })
}

/// Adds a ground-truth window from a row-major `width`×`height` bitmap
/// (non-zero = window).
///
/// # Safety
/// `ev` must be a live handle, `image_id` NUL-terminated, `bits` must hold
/// `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn fw_evaluator_add_gt_mask(
    ev: *mut FwEvaluator,
    image_id: *const c_char,
    width: u32,
    height: u32,
    bits: *const u8,
) -> FwStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| null("evaluator"))?;
        let gt = WindowAnnotation::from_mask(read_str(image_id, "image_id")?, read_mask(width, height, bits)?)?;
        ev.gts.push(gt);
        Ok(())
    })
}

/// Adds a box detection. When `bits` is non-NULL it is the detection's
/// row-major `width`×`height` mask, required for mask-mode evaluation.
///
/// # Safety
/// `ev` must be a live handle, `image_id` NUL-terminated, and `bits` NULL
/// or holding `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn fw_evaluator_add_det(
    ev: *mut FwEvaluator,
    image_id: *const c_char,
    bbox: FwBox,
    score: f64,
    width: u32,
    height: u32,
    bits: *const u8,
) -> FwStatus {
    guard(|| {
        let ev = ev.as_mut().ok_or_else(|| null("evaluator"))?;
        let mut det = Detection::boxed(read_str(image_id, "image_id")?, to_bbox(&bbox)?, score);
        if !bits.is_null() {
            det.mask = Some(read_mask(width, height, bits)?);
        }
        ev.dets.push(det);
        Ok(())
    })
}

/// Scores the accumulated detections at operating threshold `p_min`.
///
/// # Safety
/// `ev` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fw_evaluator_evaluate(
    ev: *const FwEvaluator,
    mode: FwEvalMode,
    p_min: f64,
    out: *mut FwReport,
) -> FwStatus {
    guard(|| {
        let ev = read_ref(ev, "evaluator")?;
        let opts = EvalOptions {
            p_min,
            mode: match mode {
                FwEvalMode::Box => EvalMode::Box,
                FwEvalMode::Mask => EvalMode::Mask,
            },
            interpolation: ApInterpolation::AllPoint,
            ..EvalOptions::default()
        };
        if !(0.0..=1.0).contains(&p_min) {
            return Err(Failure(
                FwStatus::InvalidArgument,
                format!("p_min {p_min} outside [0, 1]"),
            ));
        }
        let r = evaluate(&ev.dets, &ev.gts, &opts)?;
        write_out(
            out,
            FwReport {
                recall: r.recall,
                precision: r.precision,
                ap50: r.ap50,
                true_pos: r.tp,
                false_pos: r.fp,
                false_neg: r.fn_,
            },
            "out",
        )
    })
}
