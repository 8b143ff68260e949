use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use facadewin_ffi::*;

fn last_error() -> String {
    let p = fw_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn b(x: u32, y: u32, w: u32, h: u32) -> FwBox {
    FwBox { x, y, w, h }
}

#[test]
fn iou_and_depth() {
    let mut iou = -1.0;
    let s = unsafe { fw_iou_box(&b(0, 0, 10, 10), &b(5, 0, 10, 10), &mut iou) };
    assert_eq!(s, FwStatus::Ok);
    assert!((iou - 50.0 / 150.0).abs() < 1e-15);

    let s = unsafe { fw_iou_box(&b(0, 0, 0, 10), &b(5, 0, 10, 10), &mut iou) };
    assert_eq!(s, FwStatus::InvalidArgument);
    let s = unsafe { fw_iou_box(ptr::null(), &b(5, 0, 10, 10), &mut iou) };
    assert_eq!(s, FwStatus::NullPointer);
    assert!(last_error().contains("null"));

    let mut k = 0;
    assert_eq!(unsafe { fw_plan_depth(12.8, &mut k) }, FwStatus::Ok);
    assert_eq!(k, 2);
    assert_eq!(unsafe { fw_plan_depth(25.6, &mut k) }, FwStatus::Ok);
    assert_eq!(k, 3);
    assert_eq!(unsafe { fw_plan_depth(3.0, &mut k) }, FwStatus::TooSmall);
    assert!(last_error().contains("too small"));
}

#[test]
fn weights() {
    let mut a = [0.0; 5];
    let mut bb = [0.0; 5];
    assert_eq!(
        unsafe { fw_normalize_weights([1.0, 1.0, 3.0, 1.0, 1.0].as_ptr(), a.as_mut_ptr()) },
        FwStatus::Ok
    );
    assert_eq!(
        unsafe { fw_normalize_weights([5.0, 5.0, 15.0, 5.0, 5.0].as_ptr(), bb.as_mut_ptr()) },
        FwStatus::Ok
    );
    assert_eq!(a, bb);
    assert!((a[2] - 3.0 / 7.0).abs() < 1e-15);
    assert_eq!(
        unsafe { fw_normalize_weights([0.0; 5].as_ptr(), a.as_mut_ptr()) },
        FwStatus::InvalidArgument
    );

    let mut total = 0.0;
    let s = unsafe {
        fw_combine_losses(
            [1.0, 2.0, 0.0, 0.5, 1.0].as_ptr(),
            [1.0, 1.0, 9.0, 2.0, 3.0].as_ptr(),
            &mut total,
        )
    };
    assert_eq!(s, FwStatus::Ok);
    assert_eq!(total, 7.0);
}

#[test]
fn citygml_json() {
    let doc = CString::new(
        r##"<m xmlns:app="a"><app:ParameterizedTexture><app:imageURI>f.png</app:imageURI>
        <app:target uri="#s"><app:textureCoordinates>0 0 1 0 1 1</app:textureCoordinates></app:target>
        </app:ParameterizedTexture></m>"##,
    )
    .unwrap();
    let mut out: *mut std::ffi::c_char = ptr::null_mut();
    assert_eq!(unsafe { fw_citygml_parse(doc.as_ptr(), &mut out) }, FwStatus::Ok);
    let json = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { fw_string_free(out) };
    assert!(json.contains("\"texture_path\": \"f.png\""), "{json}");

    let bad = CString::new("<m><unclosed></m>").unwrap();
    assert_eq!(
        unsafe { fw_citygml_parse(bad.as_ptr(), &mut out) },
        FwStatus::ParseError
    );
    assert!(last_error().contains("line 1"));
    unsafe { fw_string_free(ptr::null_mut()) };
}

#[test]
fn nms_keeps_indices() {
    let dets = [
        FwDetection {
            image: 1,
            bbox: b(0, 0, 10, 10),
            score: 0.5,
        },
        FwDetection {
            image: 1,
            bbox: b(1, 0, 10, 10),
            score: 0.9,
        },
        FwDetection {
            image: 2,
            bbox: b(0, 0, 10, 10),
            score: 0.4,
        },
        FwDetection {
            image: 1,
            bbox: b(40, 40, 10, 10),
            score: 0.3,
        },
    ];
    let mut keep = [usize::MAX; 4];
    let mut len = 0;
    let s = unsafe { fw_nms(dets.as_ptr(), dets.len(), 0.5, keep.as_mut_ptr(), &mut len) };
    assert_eq!(s, FwStatus::Ok);
    assert_eq!(&keep[..len], &[1, 2, 3]);

    assert_eq!(
        unsafe { fw_nms(ptr::null(), 0, 0.5, ptr::null_mut(), &mut len) },
        FwStatus::Ok
    );
    assert_eq!(len, 0);
}

#[test]
fn evaluator_lifecycle() {
    let ev = fw_evaluator_new();
    let img = CString::new("img").unwrap();
    unsafe {
        assert_eq!(
            fw_evaluator_add_gt(ev, img.as_ptr(), 32, 32, b(0, 0, 8, 8)),
            FwStatus::Ok
        );
        assert_eq!(
            fw_evaluator_add_gt(ev, img.as_ptr(), 32, 32, b(16, 16, 8, 8)),
            FwStatus::Ok
        );
        assert_eq!(
            fw_evaluator_add_gt(ev, img.as_ptr(), 32, 32, b(30, 30, 8, 8)),
            FwStatus::InvalidArgument
        );

        let mut bits = vec![0u8; 32 * 32];
        for y in 0..8 {
            for x in 0..8 {
                bits[y * 32 + x] = 1;
            }
        }
        let s = fw_evaluator_add_det(ev, img.as_ptr(), b(0, 0, 8, 8), 0.9, 32, 32, bits.as_ptr());
        assert_eq!(s, FwStatus::Ok);
        let s = fw_evaluator_add_det(ev, img.as_ptr(), b(0, 0, 8, 8), 0.8, 32, 32, bits.as_ptr());
        assert_eq!(s, FwStatus::Ok);

        let mut r = FwReport::default();
        assert_eq!(fw_evaluator_evaluate(ev, FwEvalMode::Box, 0.5, &mut r), FwStatus::Ok);
        assert_eq!((r.true_pos, r.false_pos, r.false_neg), (1, 1, 1));
        assert_eq!((r.recall, r.precision, r.ap50), (0.5, 0.5, 0.5));
        assert_eq!(fw_evaluator_evaluate(ev, FwEvalMode::Mask, 0.5, &mut r), FwStatus::Ok);
        assert_eq!(r.true_pos, 1);
        assert_eq!(
            fw_evaluator_evaluate(ev, FwEvalMode::Box, 1.5, &mut r),
            FwStatus::InvalidArgument
        );

        let s = fw_evaluator_add_det(ev, img.as_ptr(), b(16, 16, 8, 8), 0.7, 0, 0, ptr::null());
        assert_eq!(s, FwStatus::Ok);
        assert_eq!(
            fw_evaluator_evaluate(ev, FwEvalMode::Mask, 0.5, &mut r),
            FwStatus::InvalidArgument
        );
        assert!(last_error().contains("no mask"));
        assert_eq!(fw_evaluator_evaluate(ev, FwEvalMode::Box, 0.5, &mut r), FwStatus::Ok);
        assert_eq!(r.true_pos, 2);

        fw_evaluator_free(ev);
        fw_evaluator_free(ptr::null_mut());
        assert_eq!(
            fw_evaluator_evaluate(ptr::null(), FwEvalMode::Box, 0.5, &mut r),
            FwStatus::NullPointer
        );
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/facadewin.h");
    let text = std::fs::read_to_string(&header).expect("build script writes the header");
    for name in [
        "fw_evaluator_new",
        "fw_iou_box",
        "fw_citygml_parse",
        "FW_STATUS_NULL_POINTER",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"facadewin.h\"\nint main(void) { FwEvaluator *e = fw_evaluator_new(); fw_evaluator_free(e); return 0; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
