//! C ABI over `pshe`.
//!
//! Every entry point returns a [`PsheStatus`]; on failure the message is kept
//! per thread and can be copied out with [`pshe_last_error`]. Objects are
//! opaque handles created by `*_new`/`*_compute` and released by the matching
//! `*_free`. Nothing here panics across the boundary.

#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

use pshe::constants::{constants_table, Budget, ConstantsTable};
use pshe::kernels::Kernels;
use pshe::limits::{cov_h, cov_hbar};
use pshe::paths::khasminskii_margin;
use pshe::polymer::{sample_replica_range, Backend, PolymerConfig, SpaceTimePoint};
use pshe::suite::{Suite, SuiteConfig};
use pshe::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsheStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Inadmissible = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsheBackend {
    Gram = 0,
    Field = 1,
}

/// Mollifier and covariance kernel for one dimension.
pub struct PsheKernels(Kernels);

/// A computed constants table.
pub struct PsheConstants(ConstantsTable);

/// A validated polymer configuration bound to its kernels.
pub struct PshePolymer {
    cfg: PolymerConfig,
    kernels: Kernels,
}

/// An acceptance suite; constants are computed on first use and cached.
pub struct PsheSuite(Suite);

/// Plain values of a constants table; `*_se` are Monte Carlo standard errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PsheConstantsValues {
    pub beta: f64,
    pub d: usize,
    pub gamma_sq: f64,
    pub gamma_sq_se: f64,
    pub gbar_sq: f64,
    pub gbar_sq_se: f64,
    pub c0_a: f64,
    pub c0_a_se: f64,
    pub c0_b: f64,
    pub c0_b_se: f64,
    pub c1: f64,
    pub c1_se: f64,
    pub c2: f64,
    pub khasminskii_margin: f64,
    pub fluctuation_variance: f64,
    pub truncation_flags: usize,
}

/// Monte Carlo budget of the constants; zero fields take the library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PsheBudget {
    pub nodes: usize,
    pub samples_per_node: usize,
    pub s_max: f64,
    pub dt: f64,
    pub c2_samples: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PsheStatus {
    match e {
        Error::Inadmissible { .. } => PsheStatus::Inadmissible,
        Error::Indefinite { .. } | Error::Quadrature { .. } | Error::Wrap { .. } | Error::UnderResolved { .. } => {
            PsheStatus::Numerical
        }
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => PsheStatus::Io,
        _ => PsheStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PsheStatus, String)>) -> PsheStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PsheStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            PsheStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PsheStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PsheStatus, String) {
    (PsheStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (PsheStatus, String) {
    (PsheStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (PsheStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (PsheStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

fn copy_str(s: &str, buf: *mut c_char, cap: usize, needed: &mut usize) -> Result<(), (PsheStatus, String)> {
    *needed = s.len() + 1;
    if buf.is_null() || cap < s.len() + 1 {
        return Err((PsheStatus::BufferTooSmall, format!("buffer needs {} bytes", s.len() + 1)));
    }
    unsafe {
        std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
        *buf.add(s.len()) = 0;
    }
    Ok(())
}

fn into_handle<T>(v: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(v));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pshe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`.
///
/// `*needed` receives the size including the terminating NUL; a null or short
/// buffer yields `BufferTooSmall` without touching the stored message.
///
/// # Safety
/// `buf` must be null or valid for `cap` writable bytes; `needed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pshe_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> PsheStatus {
    let Some(needed) = needed.as_mut() else {
        return PsheStatus::NullPointer;
    };
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_str(&msg, buf, cap, needed) {
        Ok(()) => PsheStatus::Ok,
        Err((s, _)) => s,
    }
}

/// Builds the standard kernels for dimension `d` (d ≥ 3).
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn pshe_kernels_new(d: usize, out: *mut *mut PsheKernels) -> PsheStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        into_handle(PsheKernels(Kernels::standard(d).map_err(lib)?), out);
        Ok(())
    })
}

/// # Safety
/// `k` must be null or a handle from `pshe_kernels_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pshe_kernels_free(k: *mut PsheKernels) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Evaluates φ (`which` = 0) or V (`which` = 1) at radius `r`.
///
/// # Safety
/// `k` must be a live kernels handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pshe_kernels_radial(k: *const PsheKernels, which: u32, r: f64, out: *mut f64) -> PsheStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernels"))?;
        let out = out_ref(out, "out")?;
        if !(r >= 0.0) {
            return Err(invalid("radius must be nonnegative"));
        }
        *out = match which {
            0 => k.0.phi.radial(r),
            1 => k.0.v.radial(r),
            _ => return Err(invalid("which must be 0 (phi) or 1 (V)")),
        };
        Ok(())
    })
}

/// Khas'minskii margin β²·sup_x ∫₀^∞ E_x[V(√2 W_s)] ds; admissible when below 1.
///
/// # Safety
/// `k` must be a live kernels handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pshe_khasminskii_margin(k: *const PsheKernels, beta: f64, out: *mut f64) -> PsheStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernels"))?;
        *out_ref(out, "out")? = khasminskii_margin(beta, &k.0.v).map_err(lib)?;
        Ok(())
    })
}

/// Computes the constants table at β.
///
/// # Safety
/// `k` must be a live kernels handle; `budget` may be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pshe_constants_compute(
    k: *const PsheKernels,
    beta: f64,
    budget: *const PsheBudget,
    seed: u64,
    out: *mut *mut PsheConstants,
) -> PsheStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernels"))?;
        let out = out_ref(out, "out")?;
        let mut b = Budget::default();
        if let Some(p) = budget.as_ref() {
            if p.nodes > 0 {
                b.nodes = p.nodes;
            }
            if p.samples_per_node > 0 {
                b.samples_per_node = p.samples_per_node;
            }
            if p.s_max > 0.0 {
                b.s_max = p.s_max;
            }
            if p.dt > 0.0 {
                b.dt = p.dt;
            }
            if p.c2_samples > 0 {
                b.c2_samples = p.c2_samples;
            }
        }
        into_handle(PsheConstants(constants_table(beta, &k.0.v, &b, seed).map_err(lib)?), out);
        Ok(())
    })
}

/// # Safety
/// `c` must be a live constants handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pshe_constants_values(c: *const PsheConstants, out: *mut PsheConstantsValues) -> PsheStatus {
    guard(|| {
        let t = &c.as_ref().ok_or_else(|| null("constants"))?.0;
        *out_ref(out, "out")? = PsheConstantsValues {
            beta: t.beta,
            d: t.d,
            gamma_sq: t.gamma_sq.value,
            gamma_sq_se: t.gamma_sq.se,
            gbar_sq: t.gbar_sq.value,
            gbar_sq_se: t.gbar_sq.se,
            c0_a: t.c0_a.value,
            c0_a_se: t.c0_a.se,
            c0_b: t.c0_b.value,
            c0_b_se: t.c0_b.se,
            c1: t.c1.value,
            c1_se: t.c1.se,
            c2: t.c2,
            khasminskii_margin: t.khasminskii_margin,
            fluctuation_variance: t.fluctuation_variance(),
            truncation_flags: t.truncation_flags,
        };
        Ok(())
    })
}

/// Writes the table as JSON to the NUL-terminated path.
///
/// # Safety
/// `c` must be a live constants handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pshe_constants_write_json(c: *const PsheConstants, path: *const c_char) -> PsheStatus {
    guard(|| {
        let t = &c.as_ref().ok_or_else(|| null("constants"))?.0;
        if path.is_null() {
            return Err(null("path"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        t.write_json(Path::new(p)).map_err(lib)
    })
}

/// # Safety
/// `c` must be null or a handle from `pshe_constants_compute` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pshe_constants_free(c: *mut PsheConstants) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Configures 𝒵_T(x) sampling: `horizons` has `n_horizons` entries, `starts`
/// holds `n_starts` points of dimension `d` back to back.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pshe_polymer_new(
    d: usize,
    beta: f64,
    dt: f64,
    n_paths: usize,
    horizons: *const f64,
    n_horizons: usize,
    starts: *const f64,
    n_starts: usize,
    backend: PsheBackend,
    seed: u64,
    out: *mut *mut PshePolymer,
) -> PsheStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let h = slice(horizons, n_horizons, "horizons")?;
        let s = slice(starts, n_starts * d, "starts")?;
        let kernels = Kernels::standard(d).map_err(lib)?;
        let mut cfg = PolymerConfig::new(d, beta);
        cfg.dt = dt;
        cfg.n_paths = n_paths;
        cfg.horizons = h.to_vec();
        cfg.starts = s.chunks(d.max(1)).map(|c| c.to_vec()).collect();
        cfg.backend = match backend {
            PsheBackend::Gram => Backend::Gram,
            PsheBackend::Field => Backend::Field,
        };
        cfg.seed = seed;
        cfg.validate(&kernels).map_err(lib)?;
        into_handle(PshePolymer { cfg, kernels }, out);
        Ok(())
    })
}

/// Samples replica `replica`; `z` receives n_horizons × n_starts values,
/// horizon-major. Replicas are independent and reproducible by index.
///
/// # Safety
/// `p` must be a live polymer handle and `z` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pshe_polymer_sample(p: *const PshePolymer, replica: usize, z: *mut f64, len: usize) -> PsheStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("polymer"))?;
        let want = p.cfg.horizons.len() * p.cfg.starts.len();
        if len < want {
            return Err((PsheStatus::BufferTooSmall, format!("z needs {want} entries")));
        }
        if z.is_null() {
            return Err(null("z"));
        }
        let s = sample_replica_range(&p.cfg, &p.kernels, replica..replica + 1).map_err(lib)?;
        std::slice::from_raw_parts_mut(z, want).copy_from_slice(&s[0].z);
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from `pshe_polymer_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pshe_polymer_free(p: *mut PshePolymer) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Covariance of the limit fields at (t, x) and (s, y): `field` 0 is ℋ with
/// amplitude `amp_sq` = γ², 1 is ℋ̄ with amplitude ḡ².
///
/// # Safety
/// `x`, `y` must hold `d` values; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pshe_limit_covariance(
    field: u32,
    d: usize,
    t: f64,
    x: *const f64,
    s: f64,
    y: *const f64,
    amp_sq: f64,
    out: *mut f64,
) -> PsheStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = SpaceTimePoint::new(t, slice(x, d, "x")?.to_vec());
        let q = SpaceTimePoint::new(s, slice(y, d, "y")?.to_vec());
        *out = match field {
            0 => cov_h(&p, &q, amp_sq),
            1 => cov_hbar(&p, &q, amp_sq),
            _ => return Err(invalid("field must be 0 or 1")),
        }
        .map_err(lib)?;
        Ok(())
    })
}

/// Acceptance suite in d = 3 at β with the default budget (β = 0 uses the
/// reduced exact budget). `out_dir` may be null; otherwise CSVs go there.
///
/// # Safety
/// `out_dir` must be null or a valid C string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pshe_suite_new(beta: f64, seed: u64, out_dir: *const c_char, out: *mut *mut PsheSuite) -> PsheStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut cfg = SuiteConfig::at_beta(beta);
        cfg.seed = seed;
        let mut suite = Suite::new(cfg).map_err(lib)?;
        if !out_dir.is_null() {
            let p = CStr::from_ptr(out_dir).to_str().map_err(|_| invalid("out_dir is not UTF-8"))?;
            std::fs::create_dir_all(p).map_err(|e| lib(e.into()))?;
            suite = suite.with_output(Path::new(p));
        }
        into_handle(PsheSuite(suite), out);
        Ok(())
    })
}

/// Runs criterion `id` (1–12). `*pass` gets 1 or 0 and the summary line is
/// copied to `line` when it fits (`*needed` reports the size).
///
/// # Safety
/// `s` must be a live suite handle; `pass`, `needed` valid; `line` null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn pshe_suite_run(
    s: *const PsheSuite,
    id: u8,
    pass: *mut i32,
    line: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> PsheStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("suite"))?;
        let pass = out_ref(pass, "pass")?;
        let needed = out_ref(needed, "needed")?;
        let c = s.0.run(id).map_err(lib)?;
        *pass = c.pass as i32;
        if line.is_null() {
            *needed = c.line().len() + 1;
            return Ok(());
        }
        copy_str(&c.line(), line, cap, needed)
    })
}

/// # Safety
/// `s` must be null or a handle from `pshe_suite_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pshe_suite_free(s: *mut PsheSuite) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn last_error() -> String {
        let mut needed = 0;
        unsafe { pshe_last_error(ptr::null_mut(), 0, &mut needed) };
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(unsafe { pshe_last_error(buf.as_mut_ptr(), needed, &mut needed) }, PsheStatus::Ok);
        unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
    }

    #[test]
    fn null_and_invalid_inputs() {
        unsafe {
            assert_eq!(pshe_kernels_new(3, ptr::null_mut()), PsheStatus::NullPointer);
            let mut k = ptr::null_mut();
            assert_eq!(pshe_kernels_new(2, &mut k), PsheStatus::InvalidArgument);
            assert!(k.is_null());
            assert!(last_error().contains("d >= 3"));
            let mut v = 0.0;
            assert_eq!(pshe_kernels_radial(ptr::null(), 0, 0.0, &mut v), PsheStatus::NullPointer);
            pshe_kernels_free(ptr::null_mut());
        }
    }

    #[test]
    fn kernels_and_margin() {
        unsafe {
            let mut k = ptr::null_mut();
            assert_eq!(pshe_kernels_new(3, &mut k), PsheStatus::Ok);
            let (mut v0, mut far, mut m) = (0.0, 1.0, 0.0);
            assert_eq!(pshe_kernels_radial(k, 1, 0.0, &mut v0), PsheStatus::Ok);
            assert!((v0 - 3.951603745651333).abs() < 1e-6);
            pshe_kernels_radial(k, 1, 1.5, &mut far);
            assert_eq!(far, 0.0);
            assert_eq!(pshe_khasminskii_margin(k, 3.0, &mut m), PsheStatus::Ok);
            assert!(m > 1.0);
            let mut c = ptr::null_mut();
            assert_eq!(pshe_constants_compute(k, 3.0, ptr::null(), 1, &mut c), PsheStatus::Inadmissible);
            pshe_kernels_free(k);
        }
    }

    #[test]
    fn polymer_round_trip() {
        unsafe {
            let mut p = ptr::null_mut();
            let h = [1.0, 2.0];
            let s = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
            let st = pshe_polymer_new(3, 0.2, 0.0625, 8, h.as_ptr(), 2, s.as_ptr(), 2, PsheBackend::Gram, 5, &mut p);
            assert_eq!(st, PsheStatus::Ok);
            let mut z = [0.0; 4];
            assert_eq!(pshe_polymer_sample(p, 0, z.as_mut_ptr(), 3), PsheStatus::BufferTooSmall);
            assert_eq!(pshe_polymer_sample(p, 0, z.as_mut_ptr(), 4), PsheStatus::Ok);
            let mut again = [0.0; 4];
            pshe_polymer_sample(p, 0, again.as_mut_ptr(), 4);
            assert_eq!(z, again);
            assert!(z.iter().all(|&v| v > 0.0 && v.is_finite()));
            pshe_polymer_free(p);
        }
    }

    #[test]
    fn limit_covariance_matches_core() {
        let x = [0.0; 3];
        let mut v = 0.0;
        unsafe {
            assert_eq!(pshe_limit_covariance(0, 3, 1.0, x.as_ptr(), 1.0, x.as_ptr(), 1.0, &mut v), PsheStatus::Ok);
            assert!((v - 2.0 * 0.02244839026564582).abs() < 1e-10);
            assert_eq!(pshe_limit_covariance(1, 3, 1.0, x.as_ptr(), 1.0, x.as_ptr(), 1.0, &mut v), PsheStatus::InvalidArgument);
        }
    }

    #[test]
    fn zero_beta_suite_criterion() {
        unsafe {
            let mut s = ptr::null_mut();
            assert_eq!(pshe_suite_new(0.0, 7, ptr::null(), &mut s), PsheStatus::Ok);
            let (mut pass, mut needed) = (0, 0);
            assert_eq!(pshe_suite_run(s, 1, &mut pass, ptr::null_mut(), 0, &mut needed), PsheStatus::Ok);
            assert_eq!(pass, 1);
            let mut buf = vec![0 as c_char; needed];
            assert_eq!(pshe_suite_run(s, 11, &mut pass, buf.as_mut_ptr(), 4, &mut needed), PsheStatus::BufferTooSmall);
            let mut buf2 = vec![0 as c_char; needed];
            assert_eq!(pshe_suite_run(s, 11, &mut pass, buf2.as_mut_ptr(), needed, &mut needed), PsheStatus::Ok);
            assert!(CStr::from_ptr(buf2.as_ptr()).to_str().unwrap().starts_with("PASS"));
            buf.clear();
            pshe_suite_free(s);
        }
    }
}
