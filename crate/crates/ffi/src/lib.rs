//! C ABI over the `xssab` library.
//!
//! Models and maps cross the boundary as opaque handles that the caller
//! releases with the matching `*_free` function. Every fallible call returns
//! an [`XssabStatus`]; on failure the message for the calling thread is
//! available from [`xssab_last_error_message`]. Images are passed as HWC
//! arrays: `u8` for raw pixels and `f64` for preprocessed tensors.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use xssab::argument::{cosine_score, DecisionThreshold};
use xssab::metrics::{compute_eer_threshold, fmr_fnmr, ScoreSet};
use xssab::model::{ModelAdapter, ReferenceKind, ReferenceModel, ReferenceModelSpec};
use xssab::render::{render_heatmap, Palette};
use xssab::saliency::{explain_pair, read_map, write_map, ExplanationMap, ImageRef};
use xssab::tensor::{normalize, preprocess, ImageTensor, RawImage, CHANNELS};

/// Result code of every fallible call. Values 3 to 10 mirror the exit codes
/// of the command-line tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XssabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Domain = 4,
    Degenerate = 5,
    Contract = 6,
    Load = 7,
    Data = 8,
    Io = 9,
    Format = 10,
    Panic = 11,
}

/// Which layer of an explanation map to copy out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XssabMapLayer {
    Fused = 0,
    Positive = 1,
    Negative = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XssabPalette {
    GreenPink = 0,
    ColorblindSafe = 1,
}

/// Opaque model handle.
pub struct XssabModel {
    inner: ReferenceModel,
}

/// Opaque explanation-map handle.
pub struct XssabMap {
    inner: ExplanationMap,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure {
    status: XssabStatus,
    message: String,
}

impl From<xssab::Error> for Failure {
    fn from(e: xssab::Error) -> Self {
        let status = match e {
            xssab::Error::Shape(_) => XssabStatus::Shape,
            xssab::Error::Domain(_) => XssabStatus::Domain,
            xssab::Error::DegenerateEmbedding { .. } => XssabStatus::Degenerate,
            xssab::Error::Contract(_) => XssabStatus::Contract,
            xssab::Error::Load { .. } => XssabStatus::Load,
            xssab::Error::Data(_) => XssabStatus::Data,
            xssab::Error::Io { .. } => XssabStatus::Io,
            xssab::Error::Format(_) => XssabStatus::Format,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn null(what: &str) -> Failure {
    Failure {
        status: XssabStatus::NullPointer,
        message: format!("{what} is null"),
    }
}

fn invalid(message: String) -> Failure {
    Failure {
        status: XssabStatus::InvalidArgument,
        message,
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> XssabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XssabStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            XssabStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model<'a>(p: *const XssabModel) -> FfiResult<&'a ReferenceModel> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn map<'a>(p: *const XssabMap) -> FfiResult<&'a ExplanationMap> {
    p.as_ref().map(|m| &m.inner).ok_or_else(|| null("map"))
}

unsafe fn string(p: *const c_char, what: &str) -> FfiResult<String> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

fn check_len(got: usize, want: usize, what: &str) -> FfiResult<()> {
    if got != want {
        return Err(invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

unsafe fn model_image(m: &ReferenceModel, data: *const f64, len: usize) -> FfiResult<ImageTensor> {
    let (h, w) = m.input_shape();
    check_len(len, h * w * CHANNELS, "image")?;
    Ok(ImageTensor::new(h, w, slice(data, len, "image")?.to_vec())?)
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn xssab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xssab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a seeded reference model. `kind` is `"tiny-cnn"` or
/// `"linear-toy"`.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_new(
    kind: *const c_char,
    seed: u64,
    height: usize,
    width: usize,
    embedding_dim: usize,
    out_model: *mut *mut XssabModel,
) -> XssabStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let kind = ReferenceKind::parse(&string(kind, "kind")?)?;
        let spec = ReferenceModelSpec {
            kind,
            seed,
            height,
            width,
            embedding_dim,
        };
        *slot = Box::into_raw(Box::new(XssabModel {
            inner: spec.build()?,
        }));
        Ok(())
    })
}

/// Loads a model from a weight file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_load(
    path: *const c_char,
    out_model: *mut *mut XssabModel,
) -> XssabStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let inner = ReferenceModel::load(&PathBuf::from(string(path, "path")?))?;
        *slot = Box::into_raw(Box::new(XssabModel { inner }));
        Ok(())
    })
}

/// Writes the model's weights.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_save(
    model: *const XssabModel,
    path: *const c_char,
) -> XssabStatus {
    guard(|| {
        let m = self::model(model)?;
        m.save(&PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_free(model: *mut XssabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input height and width the model expects.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_input_shape(
    model: *const XssabModel,
    out_height: *mut usize,
    out_width: *mut usize,
) -> XssabStatus {
    guard(|| {
        let (h, w) = self::model(model)?.input_shape();
        *out(out_height, "out_height")? = h;
        *out(out_width, "out_width")? = w;
        Ok(())
    })
}

/// Embedding length of the model.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_embedding_dim(
    model: *const XssabModel,
    out_dim: *mut usize,
) -> XssabStatus {
    guard(|| {
        *out(out_dim, "out_dim")? = self::model(model)?.embedding_dim();
        Ok(())
    })
}

/// Copies the model id into `buf` (NUL-terminated, truncated to
/// `buf_len`) and stores the full length without the NUL in `out_len`.
/// `buf` may be null to query the length.
///
/// # Safety
/// `buf` must hold `buf_len` bytes when non-null; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_model_id(
    model: *const XssabModel,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> XssabStatus {
    guard(|| {
        let id = self::model(model)?.model_id();
        *out(out_len, "out_len")? = id.len();
        if !buf.is_null() && buf_len > 0 {
            let n = id.len().min(buf_len - 1);
            ptr::copy_nonoverlapping(id.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        Ok(())
    })
}

/// Maps 8-bit HWC pixels to the model range `(v/255 − 0.5)/0.5`.
///
/// # Safety
/// `pixels` and `out_image` must each hold `height·width·3` elements.
#[no_mangle]
pub unsafe extern "C" fn xssab_preprocess(
    pixels: *const u8,
    height: usize,
    width: usize,
    out_image: *mut f64,
    out_len: usize,
) -> XssabStatus {
    guard(|| {
        let n = height * width * CHANNELS;
        check_len(out_len, n, "out_image")?;
        let raw = RawImage::new(height, width, slice(pixels, n, "pixels")?.to_vec())?;
        slice_mut(out_image, out_len, "out_image")?.copy_from_slice(preprocess(&raw).data());
        Ok(())
    })
}

/// Unit-norm embedding of a preprocessed image.
///
/// # Safety
/// `image` must hold `image_len` values and `out_embedding` `out_len`.
#[no_mangle]
pub unsafe extern "C" fn xssab_embed(
    model: *const XssabModel,
    image: *const f64,
    image_len: usize,
    out_embedding: *mut f64,
    out_len: usize,
) -> XssabStatus {
    guard(|| {
        let m = self::model(model)?;
        check_len(out_len, m.embedding_dim(), "out_embedding")?;
        let e = m.embed(&model_image(m, image, image_len)?)?;
        slice_mut(out_embedding, out_len, "out_embedding")?.copy_from_slice(e.values());
        Ok(())
    })
}

/// Gradient of `w · normalize(f(image))` with respect to the image.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn xssab_vjp(
    model: *const XssabModel,
    image: *const f64,
    image_len: usize,
    cotangent: *const f64,
    cotangent_len: usize,
    out_gradient: *mut f64,
    out_len: usize,
) -> XssabStatus {
    guard(|| {
        let m = self::model(model)?;
        check_len(out_len, image_len, "out_gradient")?;
        let img = model_image(m, image, image_len)?;
        let g = m.vjp(&img, slice(cotangent, cotangent_len, "cotangent")?)?;
        slice_mut(out_gradient, out_len, "out_gradient")?.copy_from_slice(g.data());
        Ok(())
    })
}

/// Cosine similarity of two vectors; both are normalized first.
///
/// # Safety
/// `a` and `b` must hold `dim` values; `out_score` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_cosine(
    a: *const f64,
    b: *const f64,
    dim: usize,
    out_score: *mut f64,
) -> XssabStatus {
    guard(|| {
        let ea = normalize(slice(a, dim, "a")?)?;
        let eb = normalize(slice(b, dim, "b")?)?;
        *out(out_score, "out_score")? = cosine_score(&ea, &eb)?;
        Ok(())
    })
}

/// Explanation maps for both images of a pair at decision threshold
/// `threshold`. On success the caller owns both map handles.
///
/// # Safety
/// `image_a` and `image_b` must hold `image_len` values each; output
/// pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_explain_pair(
    model: *const XssabModel,
    image_a: *const f64,
    image_b: *const f64,
    image_len: usize,
    threshold: f64,
    out_score: *mut f64,
    out_map_a: *mut *mut XssabMap,
    out_map_b: *mut *mut XssabMap,
) -> XssabStatus {
    guard(|| {
        let m = self::model(model)?;
        let score = out(out_score, "out_score")?;
        let slot_a = out(out_map_a, "out_map_a")?;
        let slot_b = out(out_map_b, "out_map_b")?;
        let a = model_image(m, image_a, image_len)?;
        let b = model_image(m, image_b, image_len)?;
        let th = DecisionThreshold::new(threshold, "caller")?;
        let ex = explain_pair(m, ImageRef::new("a", &a), ImageRef::new("b", &b), &th)?;
        *score = ex.decomposition.score;
        *slot_a = Box::into_raw(Box::new(XssabMap { inner: ex.map_i }));
        *slot_b = Box::into_raw(Box::new(XssabMap { inner: ex.map_j }));
        Ok(())
    })
}

/// Height and width of a map.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_map_shape(
    map: *const XssabMap,
    out_height: *mut usize,
    out_width: *mut usize,
) -> XssabStatus {
    guard(|| {
        let (h, w) = self::map(map)?.shape();
        *out(out_height, "out_height")? = h;
        *out(out_width, "out_width")? = w;
        Ok(())
    })
}

/// Copies one layer (row-major, `height·width` values) into `out_values`.
///
/// # Safety
/// `out_values` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn xssab_map_copy(
    map: *const XssabMap,
    layer: XssabMapLayer,
    out_values: *mut f64,
    out_len: usize,
) -> XssabStatus {
    guard(|| {
        let m = self::map(map)?;
        let src = match layer {
            XssabMapLayer::Fused => &m.fused,
            XssabMapLayer::Positive => &m.positive,
            XssabMapLayer::Negative => &m.negative,
        };
        check_len(out_len, src.data().len(), "out_values")?;
        slice_mut(out_values, out_len, "out_values")?.copy_from_slice(src.data());
        Ok(())
    })
}

/// Writes a map file.
///
/// # Safety
/// `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xssab_map_save(map: *const XssabMap, path: *const c_char) -> XssabStatus {
    guard(|| {
        write_map(self::map(map)?, &PathBuf::from(string(path, "path")?))?;
        Ok(())
    })
}

/// Reads a map file.
///
/// # Safety
/// `path` must be NUL-terminated and `out_map` writable.
#[no_mangle]
pub unsafe extern "C" fn xssab_map_load(
    path: *const c_char,
    out_map: *mut *mut XssabMap,
) -> XssabStatus {
    guard(|| {
        let slot = out(out_map, "out_map")?;
        let inner = read_map(&PathBuf::from(string(path, "path")?))?;
        *slot = Box::into_raw(Box::new(XssabMap { inner }));
        Ok(())
    })
}

/// Renders the fused layer as a heatmap PNG.
///
/// # Safety
/// `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xssab_map_render_png(
    map: *const XssabMap,
    path: *const c_char,
    palette: XssabPalette,
) -> XssabStatus {
    guard(|| {
        let palette = match palette {
            XssabPalette::GreenPink => Palette::GreenPink,
            XssabPalette::ColorblindSafe => Palette::ColorblindSafe,
        };
        render_heatmap(
            self::map(map)?,
            &PathBuf::from(string(path, "path")?),
            palette,
            None,
        )?;
        Ok(())
    })
}

/// Releases a map. Null is ignored.
///
/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xssab_map_free(map: *mut XssabMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

unsafe fn score_set(
    genuine: *const f64,
    n_genuine: usize,
    imposter: *const f64,
    n_imposter: usize,
) -> FfiResult<ScoreSet> {
    Ok(ScoreSet::new(
        slice(genuine, n_genuine, "genuine")?.to_vec(),
        slice(imposter, n_imposter, "imposter")?.to_vec(),
    )?)
}

/// False match and false non-match rates at `threshold` (a score at the
/// threshold is a match).
///
/// # Safety
/// Score arrays must hold the stated counts; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_fmr_fnmr(
    genuine: *const f64,
    n_genuine: usize,
    imposter: *const f64,
    n_imposter: usize,
    threshold: f64,
    out_fmr: *mut f64,
    out_fnmr: *mut f64,
) -> XssabStatus {
    guard(|| {
        let (fmr, fnmr) = fmr_fnmr(
            &score_set(genuine, n_genuine, imposter, n_imposter)?,
            threshold,
        )?;
        *out(out_fmr, "out_fmr")? = fmr;
        *out(out_fnmr, "out_fnmr")? = fnmr;
        Ok(())
    })
}

/// Equal-error threshold and rate.
///
/// # Safety
/// Score arrays must hold the stated counts; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn xssab_eer(
    genuine: *const f64,
    n_genuine: usize,
    imposter: *const f64,
    n_imposter: usize,
    out_threshold: *mut f64,
    out_eer: *mut f64,
) -> XssabStatus {
    guard(|| {
        let p = compute_eer_threshold(&score_set(genuine, n_genuine, imposter, n_imposter)?)?;
        *out(out_threshold, "out_threshold")? = p.threshold;
        *out(out_eer, "out_eer")? = p.eer;
        Ok(())
    })
}
