//! C ABI over `sfda-core`.
//!
//! Every function returns an [`SfdaStatus`]; on failure the message is
//! available from [`sfda_last_error_message`] on the calling thread.
//! Buffers are borrowed for the duration of a call and copied; the library
//! keeps no pointer after returning. Strings handed out by the library are
//! released with [`sfda_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use sfda_core::chaos::chaos_score;
use sfda_core::imgproc::{histogram_equalize, histogram_equalize_per_slice};
use sfda_core::metrics::{asd, dice, AsdMode};
use sfda_core::pipeline::to_json;
use sfda_core::plausibility::parse_priors;
use sfda_core::{load_priors, refine_mask, Connectivity, Grid, GridImage, LabelMask, PriorsTable, ProbabilityMap, SampleFormat};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfdaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimsMismatch = 3,
    Prior = 4,
    Refine = 5,
    Panic = 6,
}

/// Sample type of an image buffer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfdaFormat {
    U8 = 0,
    U16 = 1,
    F32 = 2,
}

impl From<SfdaFormat> for SampleFormat {
    fn from(f: SfdaFormat) -> Self {
        match f {
            SfdaFormat::U8 => SampleFormat::U8,
            SfdaFormat::U16 => SampleFormat::U16,
            SfdaFormat::F32 => SampleFormat::F32,
        }
    }
}

impl From<SampleFormat> for SfdaFormat {
    fn from(f: SampleFormat) -> Self {
        match f {
            SampleFormat::U8 => SfdaFormat::U8,
            SampleFormat::U16 => SfdaFormat::U16,
            SampleFormat::F32 => SfdaFormat::F32,
        }
    }
}

/// Voxel lattice: `rank` is 2 (y, x) or 3 (z, y, x). `spacing` may be null
/// for unit spacing.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SfdaGrid {
    pub dims: *const usize,
    pub rank: usize,
    pub spacing: *const f64,
}

/// Parsed priors table.
pub struct SfdaPriors {
    table: PriorsTable,
}

struct Failure(SfdaStatus, String);

type Res<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Res<()>>(f: F) -> SfdaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfdaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SfdaStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SfdaStatus::InvalidArgument, msg.into())
}

fn non_null<T>(p: *const T, what: &str) -> Res<()> {
    if p.is_null() {
        Err(Failure(SfdaStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn view<'a, T>(p: *const T, len: usize, what: &str) -> Res<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn grid_from(g: *const SfdaGrid) -> Res<Grid> {
    non_null(g, "grid")?;
    let g = &*g;
    if g.rank != 2 && g.rank != 3 {
        return Err(invalid(format!("rank must be 2 or 3, got {}", g.rank)));
    }
    let dims = view(g.dims, g.rank, "grid.dims")?.to_vec();
    let grid = if g.spacing.is_null() {
        Grid::unit(dims)
    } else {
        Grid::new(dims, slice::from_raw_parts(g.spacing, g.rank).to_vec())
    };
    grid.map_err(|e| invalid(e.to_string()))
}

fn check_len(what: &str, len: usize, expected: usize) -> Res<()> {
    if len != expected {
        return Err(Failure(
            SfdaStatus::DimsMismatch,
            format!("dims mismatch: {what} holds {len} values, dims imply {expected}"),
        ));
    }
    Ok(())
}

unsafe fn mask_from(grid: &Grid, labels: *const u32, len: usize, what: &str) -> Res<LabelMask> {
    check_len(what, len, grid.voxel_count())?;
    let values = view(labels, len, what)?.to_vec();
    LabelMask::new(grid.clone(), values, BTreeMap::new()).map_err(|e| invalid(e.to_string()))
}

unsafe fn store<T>(out: *mut T, value: T, what: &str) -> Res<()> {
    non_null(out, what)?;
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Library version; static storage.
#[no_mangle]
pub extern "C" fn sfda_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version has no interior nul"),
    };
    VERSION.as_ptr()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn sfda_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn sfda_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a priors JSON file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfda_priors_load(path: *const c_char, out: *mut *mut SfdaPriors) -> SfdaStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let table = load_priors(path).map_err(|e| Failure(SfdaStatus::Prior, e.to_string()))?;
        store(out, Box::into_raw(Box::new(SfdaPriors { table })), "out")
    })
}

/// Parses a priors JSON document held in memory.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfda_priors_parse(json: *const c_char, out: *mut *mut SfdaPriors) -> SfdaStatus {
    guard(|| {
        let json = c_str(json, "json")?;
        let (table, _) = parse_priors(json).map_err(|e| Failure(SfdaStatus::Prior, e.to_string()))?;
        store(out, Box::into_raw(Box::new(SfdaPriors { table })), "out")
    })
}

/// # Safety
/// `priors` must come from `sfda_priors_load`/`sfda_priors_parse` and not
/// have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sfda_priors_free(priors: *mut SfdaPriors) {
    if !priors.is_null() {
        drop(Box::from_raw(priors));
    }
}

/// Inputs of [`sfda_refine`].
///
/// `class_labels`/`class_names` name the `n_classes` labels of the mask;
/// the probability buffer (optional, null when absent) holds one
/// interleaved channel per class in that order. `connectivity` is 4 or 8 in
/// 2-D, 6 or 26 in 3-D, or 0 for the full neighborhood.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SfdaRefineInput {
    pub grid: SfdaGrid,
    pub mask: *const u32,
    pub mask_len: usize,
    pub class_labels: *const u32,
    pub class_names: *const *const c_char,
    pub n_classes: usize,
    pub image: *const f32,
    pub image_len: usize,
    pub image_channels: usize,
    pub image_format: SfdaFormat,
    pub prob: *const f32,
    pub prob_len: usize,
    pub connectivity: u32,
}

/// Refines a mask. Writes the refined labels to `out_mask` (`out_len`
/// values, equal to the voxel count) and, when `out_report` is not null,
/// the JSON report to `*out_report` (free with `sfda_string_free`).
///
/// # Safety
/// All pointers in `input` must be valid for the stated lengths;
/// `out_mask` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn sfda_refine(
    priors: *const SfdaPriors,
    input: *const SfdaRefineInput,
    out_mask: *mut u32,
    out_len: usize,
    out_report: *mut *mut c_char,
) -> SfdaStatus {
    guard(|| {
        non_null(priors, "priors")?;
        non_null(input, "input")?;
        let input = &*input;
        let grid = grid_from(&input.grid)?;
        let n = grid.voxel_count();
        check_len("mask", input.mask_len, n)?;
        check_len("out_mask", out_len, n)?;

        let labels = view(input.class_labels, input.n_classes, "class_labels")?;
        let name_ptrs = view(input.class_names, input.n_classes, "class_names")?;
        let mut classes = Vec::with_capacity(input.n_classes);
        for (&label, &name) in labels.iter().zip(name_ptrs) {
            classes.push((label, c_str(name, "class name")?.to_string()));
        }
        let names: BTreeMap<u32, String> = classes.iter().cloned().collect();
        let mask_values = view(input.mask, input.mask_len, "mask")?.to_vec();
        let mask = LabelMask::new(grid.clone(), mask_values, names).map_err(|e| invalid(e.to_string()))?;

        check_len("image", input.image_len, n * input.image_channels)?;
        let image_values = view(input.image, input.image_len, "image")?.to_vec();
        let image = GridImage::new(grid.clone(), input.image_channels, input.image_format.into(), image_values)
            .map_err(|e| invalid(e.to_string()))?;

        let prob = if input.prob.is_null() {
            None
        } else {
            check_len("prob", input.prob_len, n * classes.len())?;
            let values = view(input.prob, input.prob_len, "prob")?.to_vec();
            Some(ProbabilityMap::new(grid.clone(), classes, values).map_err(|e| invalid(e.to_string()))?)
        };

        let conn = match input.connectivity {
            0 => Connectivity::Full,
            c => Connectivity::from_count(c, grid.rank()).map_err(|e| invalid(e.to_string()))?,
        };
        let (refined, report) = refine_mask(&mask, prob.as_ref(), &image, &(*priors).table, conn)
            .map_err(|e| Failure(SfdaStatus::Refine, e.to_string()))?;
        non_null(out_mask, "out_mask")?;
        slice::from_raw_parts_mut(out_mask, out_len).copy_from_slice(refined.labels());
        if !out_report.is_null() {
            out_report.write(into_c_string(to_json(&report)));
        }
        Ok(())
    })
}

/// DICE of `label` between two masks of `len` voxels.
///
/// # Safety
/// `pred` and `gt` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfda_dice(
    grid: *const SfdaGrid,
    pred: *const u32,
    gt: *const u32,
    len: usize,
    label: u32,
    out: *mut f64,
) -> SfdaStatus {
    guard(|| {
        let grid = grid_from(grid)?;
        let p = mask_from(&grid, pred, len, "pred")?;
        let g = mask_from(&grid, gt, len, "gt")?;
        let d = dice(&p, &g, label).map_err(|e| invalid(e.to_string()))?;
        store(out, d, "out")
    })
}

/// Average symmetric surface distance in spacing units. Writes NaN when
/// either mask lacks the label. `slice_mode` non-zero averages per-slice
/// 2-D distances instead.
///
/// # Safety
/// `pred` and `gt` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfda_asd(
    grid: *const SfdaGrid,
    pred: *const u32,
    gt: *const u32,
    len: usize,
    label: u32,
    slice_mode: i32,
    out: *mut f64,
) -> SfdaStatus {
    guard(|| {
        let grid = grid_from(grid)?;
        let p = mask_from(&grid, pred, len, "pred")?;
        let g = mask_from(&grid, gt, len, "gt")?;
        let mode = if slice_mode != 0 { AsdMode::Slice } else { AsdMode::Volume };
        let v = asd(&p, &g, label, mode).map_err(|e| invalid(e.to_string()))?;
        store(out, v.unwrap_or(f64::NAN), "out")
    })
}

/// Chaos score between two nul-terminated strings, in `[0, 100]`.
///
/// # Safety
/// Both strings must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfda_chaos_score(original: *const c_char, perturbed: *const c_char, out: *mut f64) -> SfdaStatus {
    guard(|| {
        let o = c_str(original, "original")?;
        let p = c_str(perturbed, "perturbed")?;
        let s = chaos_score(o, p).map_err(|e| invalid(e.to_string()))?;
        store(out, s, "out")
    })
}

/// Histogram-equalizes a single-channel image. `out` receives `len`
/// samples and `out_format` their type (u8 for up to 256 levels). A
/// degenerate image is copied unchanged with its own format.
///
/// # Safety
/// `values` and `out` must hold `len` values; `out_format` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sfda_histogram_equalize(
    grid: *const SfdaGrid,
    values: *const f32,
    len: usize,
    format: SfdaFormat,
    levels: usize,
    per_slice: i32,
    out: *mut f32,
    out_format: *mut SfdaFormat,
) -> SfdaStatus {
    guard(|| {
        let grid = grid_from(grid)?;
        check_len("values", len, grid.voxel_count())?;
        let data = view(values, len, "values")?.to_vec();
        let image = GridImage::new(grid, 1, format.into(), data).map_err(|e| invalid(e.to_string()))?;
        let eq = if per_slice != 0 {
            histogram_equalize_per_slice(&image, levels)
        } else {
            histogram_equalize(&image, levels)
        }
        .map_err(|e| invalid(e.to_string()))?;
        non_null(out, "out")?;
        slice::from_raw_parts_mut(out, len).copy_from_slice(eq.values());
        store(out_format, eq.format().into(), "out_format")
    })
}
