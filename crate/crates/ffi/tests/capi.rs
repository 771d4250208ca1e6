use std::ffi::{CStr, CString};
use std::ptr;

use volcraft::rng::substream;
use volcraft::surfaces::GridSpec;
use volcraft::vae::{Architecture, DecoderKind, VaeModel};
use volcraft_ffi::*;

fn model(kind: DecoderKind) -> (VaeModel, *mut VcModel) {
    let arch = Architecture {
        decoder_kind: kind,
        latent_dim: 2,
        hidden: vec![8],
    };
    let m = VaeModel::new(GridSpec::default(), &arch, 1e-6, &mut substream(1, "init")).unwrap();
    let json = CString::new(m.to_json().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { vc_model_from_json(json.as_ptr(), &mut handle) },
        VcStatus::Ok
    );
    assert!(!handle.is_null());
    (m, handle)
}

fn last_error() -> String {
    let p = vc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn decode_and_encode_match_the_library() {
    for kind in [DecoderKind::Grid, DecoderKind::Pointwise] {
        let (m, h) = model(kind);
        let (mut d, mut n) = (0usize, 0usize);
        assert_eq!(unsafe { vc_model_dims(h, &mut d, &mut n) }, VcStatus::Ok);
        assert_eq!((d, n), (2, 40));

        let z = [0.3, -0.7];
        let mut vols = [0.0; 40];
        assert_eq!(
            unsafe { vc_model_decode(h, z.as_ptr(), 2, vols.as_mut_ptr(), 40) },
            VcStatus::Ok
        );
        assert_eq!(vols.to_vec(), m.decode_surface(&z).unwrap());

        let mut mean = [0.0; 2];
        assert_eq!(
            unsafe { vc_model_encode(h, vols.as_ptr(), 40, mean.as_mut_ptr(), 2) },
            VcStatus::Ok
        );
        assert_eq!(mean.to_vec(), m.encode(&vols).unwrap().mean);

        let (t, dl) = ([1.0, 0.5], [0.5, 0.25]);
        let mut at = [0.0; 2];
        assert_eq!(
            unsafe {
                vc_model_decode_at(
                    h,
                    z.as_ptr(),
                    2,
                    t.as_ptr(),
                    dl.as_ptr(),
                    2,
                    at.as_mut_ptr(),
                )
            },
            VcStatus::Ok
        );
        assert_eq!(
            at.to_vec(),
            m.decode_at(&z, &[(1.0, 0.5), (0.5, 0.25)]).unwrap()
        );
        unsafe { vc_model_free(h) };
    }
}

#[test]
fn complete_recovers_a_decoded_surface() {
    let (m, h) = model(DecoderKind::Pointwise);
    let truth = m.decode_surface(&[0.4, 0.2]).unwrap();
    let coords = m.grid().coordinates();
    let t: Vec<f64> = coords.iter().map(|c| c.0).collect();
    let d: Vec<f64> = coords.iter().map(|c| c.1).collect();
    let (mut z, mut vols, mut obj) = ([0.0; 2], [0.0; 40], f64::NAN);
    let status = unsafe {
        vc_model_complete(
            h,
            t.as_ptr(),
            d.as_ptr(),
            truth.as_ptr(),
            40,
            4,
            0,
            z.as_mut_ptr(),
            2,
            vols.as_mut_ptr(),
            40,
            &mut obj,
        )
    };
    assert_eq!(status, VcStatus::Ok);
    assert!(obj < 1e-12);
    for (a, b) in vols.iter().zip(&truth) {
        assert!((a - b).abs() < 1e-5);
    }
    unsafe { vc_model_free(h) };
}

#[test]
fn errors_are_reported_with_codes() {
    let (_, h) = model(DecoderKind::Grid);
    let mut vols = [0.0; 40];
    let z = [0.0; 3];
    assert_eq!(
        unsafe { vc_model_decode(h, z.as_ptr(), 3, vols.as_mut_ptr(), 40) },
        VcStatus::InvalidArgument
    );
    assert!(last_error().contains("z has length 3"));
    assert_eq!(
        unsafe { vc_model_decode(ptr::null(), z.as_ptr(), 2, vols.as_mut_ptr(), 40) },
        VcStatus::NullPointer
    );

    // grid decoders only accept on-grid observations
    let (t, d, v) = ([0.3], [0.5], [0.1]);
    let (mut zo, mut out) = ([0.0; 2], [0.0; 40]);
    let status = unsafe {
        vc_model_complete(
            h,
            t.as_ptr(),
            d.as_ptr(),
            v.as_ptr(),
            1,
            2,
            0,
            zo.as_mut_ptr(),
            2,
            out.as_mut_ptr(),
            40,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, VcStatus::DataError);

    let missing = CString::new("/nonexistent/model.json").unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { vc_model_load(missing.as_ptr(), &mut handle) },
        VcStatus::DataError
    );
    assert!(handle.is_null());
    unsafe { vc_model_free(h) };
    unsafe { vc_model_free(ptr::null_mut()) };
}

#[test]
fn load_from_file() {
    let (m, h) = model(DecoderKind::Pointwise);
    unsafe { vc_model_free(h) };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { vc_model_load(c.as_ptr(), &mut handle) },
        VcStatus::Ok
    );
    unsafe { vc_model_free(handle) };
}

#[test]
fn pricers_round_trip() {
    let mut price = 0.0;
    assert_eq!(
        unsafe { vc_bs_call_price(100.0, 105.0, 0.01, 0.5, 0.2, &mut price) },
        VcStatus::Ok
    );
    let mut iv = 0.0;
    assert_eq!(
        unsafe { vc_implied_vol(price, 100.0, 105.0, 0.01, 0.5, &mut iv) },
        VcStatus::Ok
    );
    assert!((iv - 0.2).abs() < 1e-10);
    assert_eq!(
        unsafe { vc_implied_vol(200.0, 100.0, 105.0, 0.01, 0.5, &mut iv) },
        VcStatus::NumericalError
    );

    let mut heston = 0.0;
    assert_eq!(
        unsafe {
            vc_heston_call_price(
                2.0,
                0.04,
                1e-6,
                -0.5,
                0.04,
                0.01,
                100.0,
                105.0,
                0.5,
                &mut heston,
            )
        },
        VcStatus::Ok
    );
    assert!((heston - price).abs() < 1e-5);
    assert_eq!(
        unsafe {
            vc_heston_call_price(
                2.0,
                0.04,
                0.5,
                -1.5,
                0.04,
                0.0,
                100.0,
                100.0,
                1.0,
                &mut heston,
            )
        },
        VcStatus::DataError
    );
    assert!(!unsafe { CStr::from_ptr(vc_version()) }
        .to_bytes()
        .is_empty());
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/volcraft.h"))
            .unwrap();
    for name in [
        "typedef struct VcModel VcModel",
        "VC_STATUS_OK",
        "vc_model_complete",
        "vc_last_error_message",
        "vc_heston_call_price",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
