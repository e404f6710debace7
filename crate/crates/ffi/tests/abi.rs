use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use xssab::model::{ModelAdapter, ReferenceModelSpec};
use xssab::saliency::explain_pair;
use xssab::tensor::{preprocess, RawImage};
use xssab_ffi::*;

const H: usize = 16;
const W: usize = 16;
const N: usize = H * W * 3;

fn pixels(mul: usize, modulus: usize) -> Vec<u8> {
    (0..N).map(|i| (i * mul % modulus) as u8).collect()
}

fn new_model() -> *mut XssabModel {
    let kind = CString::new("tiny-cnn").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { xssab_model_new(kind.as_ptr(), 7, H, W, 8, &mut m) },
        XssabStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn preprocessed(px: &[u8]) -> Vec<f64> {
    let mut out = vec![0.0; N];
    assert_eq!(
        unsafe { xssab_preprocess(px.as_ptr(), H, W, out.as_mut_ptr(), N) },
        XssabStatus::Ok
    );
    out
}

fn last_error() -> String {
    let p = xssab_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn embed_and_explain_match_the_library() {
    let m = new_model();
    let (pa, pb) = (pixels(7, 251), pixels(11, 241));
    let (a, b) = (preprocessed(&pa), preprocessed(&pb));

    let reference = ReferenceModelSpec {
        embedding_dim: 8,
        ..ReferenceModelSpec::tiny_cnn(7, H, W)
    }
    .build()
    .unwrap();
    let ra = preprocess(&RawImage::new(H, W, pa).unwrap());
    let rb = preprocess(&RawImage::new(H, W, pb).unwrap());
    assert_eq!(ra.data(), &a[..]);

    let mut e = vec![0.0; 8];
    assert_eq!(
        unsafe { xssab_embed(m, a.as_ptr(), N, e.as_mut_ptr(), 8) },
        XssabStatus::Ok
    );
    assert_eq!(e, reference.embed(&ra).unwrap().values());

    let th = xssab::argument::DecisionThreshold::new(0.1, "t").unwrap();
    let want = explain_pair(
        &reference,
        xssab::saliency::ImageRef::new("a", &ra),
        xssab::saliency::ImageRef::new("b", &rb),
        &th,
    )
    .unwrap();

    let (mut score, mut ma, mut mb) = (0.0, ptr::null_mut(), ptr::null_mut());
    let st = unsafe {
        xssab_explain_pair(
            m,
            a.as_ptr(),
            b.as_ptr(),
            N,
            0.1,
            &mut score,
            &mut ma,
            &mut mb,
        )
    };
    assert_eq!(st, XssabStatus::Ok);
    assert_eq!(score, want.decomposition.score);

    let (mut h, mut w) = (0, 0);
    assert_eq!(
        unsafe { xssab_map_shape(ma, &mut h, &mut w) },
        XssabStatus::Ok
    );
    assert_eq!((h, w), (H, W));
    for (layer, expect) in [
        (XssabMapLayer::Fused, &want.map_i.fused),
        (XssabMapLayer::Positive, &want.map_i.positive),
        (XssabMapLayer::Negative, &want.map_i.negative),
    ] {
        let mut buf = vec![0.0; H * W];
        assert_eq!(
            unsafe { xssab_map_copy(ma, layer, buf.as_mut_ptr(), buf.len()) },
            XssabStatus::Ok
        );
        assert_eq!(&buf[..], expect.data());
    }
    let mut buf = vec![0.0; H * W];
    assert_eq!(
        unsafe { xssab_map_copy(mb, XssabMapLayer::Fused, buf.as_mut_ptr(), buf.len()) },
        XssabStatus::Ok
    );
    assert_eq!(&buf[..], want.map_j.fused.data());

    unsafe {
        xssab_map_free(ma);
        xssab_map_free(mb);
        xssab_model_free(m);
    }
}

#[test]
fn vjp_matches_the_library() {
    let m = new_model();
    let a = preprocessed(&pixels(5, 199));
    let w = [0.3, -0.1, 0.0, 0.5, 0.2, -0.4, 0.1, 0.05];
    let mut g = vec![0.0; N];
    let st = unsafe { xssab_vjp(m, a.as_ptr(), N, w.as_ptr(), w.len(), g.as_mut_ptr(), N) };
    assert_eq!(st, XssabStatus::Ok);
    let reference = ReferenceModelSpec {
        embedding_dim: 8,
        ..ReferenceModelSpec::tiny_cnn(7, H, W)
    }
    .build()
    .unwrap();
    let img = xssab::tensor::ImageTensor::new(H, W, a).unwrap();
    assert_eq!(&g[..], reference.vjp(&img, &w).unwrap().data());

    let st = unsafe { xssab_vjp(m, img.data().as_ptr(), N, w.as_ptr(), 3, g.as_mut_ptr(), N) };
    assert_eq!(st, XssabStatus::Shape);
    unsafe { xssab_model_free(m) };
}

#[test]
fn errors_carry_status_and_message() {
    let mut m = ptr::null_mut();
    let bad = CString::new("resnet").unwrap();
    assert_eq!(
        unsafe { xssab_model_new(bad.as_ptr(), 0, H, W, 8, &mut m) },
        XssabStatus::Domain
    );
    assert!(last_error().contains("resnet"));
    assert!(m.is_null());

    assert_eq!(
        unsafe { xssab_model_new(ptr::null(), 0, H, W, 8, &mut m) },
        XssabStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/dir/w.xsw").unwrap();
    let st = unsafe { xssab_model_load(missing.as_ptr(), &mut m) };
    assert_eq!(st, XssabStatus::Load);

    let model = new_model();
    let a = vec![0.0; N];
    let mut e = vec![0.0; 3];
    assert_eq!(
        unsafe { xssab_embed(model, a.as_ptr(), N, e.as_mut_ptr(), 3) },
        XssabStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { xssab_embed(model, a.as_ptr(), N - 1, e.as_mut_ptr(), 8) },
        XssabStatus::InvalidArgument
    );
    let (mut s, mut ma, mut mb) = (0.0, ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe {
            xssab_explain_pair(
                model,
                a.as_ptr(),
                a.as_ptr(),
                N,
                1.5,
                &mut s,
                &mut ma,
                &mut mb,
            )
        },
        XssabStatus::Domain
    );
    unsafe { xssab_model_free(model) };

    let zero = [0.0; 4];
    let one = [1.0, 0.0, 0.0, 0.0];
    let mut c = 0.0;
    assert_eq!(
        unsafe { xssab_cosine(zero.as_ptr(), one.as_ptr(), 4, &mut c) },
        XssabStatus::Degenerate
    );
}

#[test]
fn weights_and_maps_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = new_model();
    let wpath = CString::new(dir.path().join("w.xsw").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { xssab_model_save(m, wpath.as_ptr()) },
        XssabStatus::Ok
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(
        unsafe { xssab_model_load(wpath.as_ptr(), &mut loaded) },
        XssabStatus::Ok
    );

    let id = |model: *const XssabModel| {
        let mut len = 0;
        assert_eq!(
            unsafe { xssab_model_id(model, ptr::null_mut(), 0, &mut len) },
            XssabStatus::Ok
        );
        let mut buf = vec![0 as std::ffi::c_char; len + 1];
        assert_eq!(
            unsafe { xssab_model_id(model, buf.as_mut_ptr(), buf.len(), &mut len) },
            XssabStatus::Ok
        );
        unsafe { CStr::from_ptr(buf.as_ptr()) }
            .to_str()
            .unwrap()
            .to_string()
    };
    assert_eq!(id(m), id(loaded));
    assert!(id(m).starts_with("tiny-cnn:"));

    let a = preprocessed(&pixels(3, 97));
    let (mut s, mut ma, mut mb) = (0.0, ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe {
            xssab_explain_pair(
                loaded,
                a.as_ptr(),
                a.as_ptr(),
                N,
                0.0,
                &mut s,
                &mut ma,
                &mut mb,
            )
        },
        XssabStatus::Ok
    );
    assert!((s - 1.0).abs() < 1e-12);
    let mpath = CString::new(dir.path().join("a.xsm").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { xssab_map_save(ma, mpath.as_ptr()) },
        XssabStatus::Ok
    );
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { xssab_map_load(mpath.as_ptr(), &mut back) },
        XssabStatus::Ok
    );
    let mut neg = vec![1.0; H * W];
    assert_eq!(
        unsafe { xssab_map_copy(back, XssabMapLayer::Negative, neg.as_mut_ptr(), neg.len()) },
        XssabStatus::Ok
    );
    // A self-pair at threshold 0 has no negative arguments.
    assert!(neg.iter().all(|&v| v == 0.0));
    let png = CString::new(dir.path().join("a.png").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { xssab_map_render_png(back, png.as_ptr(), XssabPalette::ColorblindSafe) },
        XssabStatus::Ok
    );
    assert!(dir.path().join("a.png").exists());

    unsafe {
        xssab_map_free(ma);
        xssab_map_free(mb);
        xssab_map_free(back);
        xssab_model_free(m);
        xssab_model_free(loaded);
        xssab_model_free(ptr::null_mut());
    }
}

#[test]
fn metrics_match_hand_values() {
    let g = [0.9, 0.2];
    let i = [0.4, 0.1];
    let (mut fmr, mut fnmr) = (0.0, 0.0);
    assert_eq!(
        unsafe { xssab_fmr_fnmr(g.as_ptr(), 2, i.as_ptr(), 2, 0.3, &mut fmr, &mut fnmr) },
        XssabStatus::Ok
    );
    assert_eq!((fmr, fnmr), (0.5, 0.5));
    let (mut th, mut eer) = (0.0, 0.0);
    assert_eq!(
        unsafe { xssab_eer(g.as_ptr(), 2, i.as_ptr(), 2, &mut th, &mut eer) },
        XssabStatus::Ok
    );
    assert!((th - 0.3).abs() < 1e-15);
    assert_eq!(eer, 0.5);
    assert_eq!(
        unsafe { xssab_eer(g.as_ptr(), 2, i.as_ptr(), 0, &mut th, &mut eer) },
        XssabStatus::Domain
    );
    let v = unsafe { CStr::from_ptr(xssab_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/xssab.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    assert!(header.contains("typedef struct XssabModel XssabModel;"));
    assert!(header.contains("XSSAB_STATUS_OK = 0"));
}

/// Compiles `examples/smoke.c` against the header and the static library.
#[test]
fn c_client_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    }) else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libxssab_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let manifest = env!("CARGO_MANIFEST_DIR");
    let status = Command::new(cc)
        .args([
            &format!("{manifest}/examples/smoke.c"),
            "-I",
            &format!("{manifest}/include"),
            lib.to_str().unwrap(),
            "-lm",
            "-lpthread",
            "-ldl",
            "-o",
            bin.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("map 16x16"), "{stdout}");
}
