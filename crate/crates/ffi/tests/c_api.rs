use std::ffi::{CStr, CString};
use std::ptr;

use attribens::codebook::{Codebook, WeightVector};
use attribens::diffusion::{make_schedule, NoiseRecord, TrainingConfig};
use attribens::ensemble::EnsembleDenoiser;
use attribens::experiments::gen_gaussian_mixture;
use attribens::influence::compute_jacobian;
use attribens::manifest::{
    sha256_hex, store_members, write_json, DatasetSpec, FileRef, LoadedManifest, RunManifest,
    ScheduleSpec, SeedBlock, RUN_MANIFEST_VERSION,
};
use attribens_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(attribens_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn min_code_params_matches_core() {
    let (mut n, mut h) = (0, 0);
    let s = unsafe { attribens_min_code_params(10_000, false, &mut n, &mut h) };
    assert_eq!(s, AttribensStatus::Ok);
    assert_eq!((n, h), (16, 8));
    let s = unsafe { attribens_min_code_params(4, true, &mut n, &mut h) };
    assert_eq!(s, AttribensStatus::Ok);
    assert_eq!((n, h), (6, 3));
    let s = unsafe { attribens_min_code_params(4, true, ptr::null_mut(), &mut h) };
    assert_eq!(s, AttribensStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn codebook_lifecycle() {
    let mut cb = ptr::null_mut();
    assert_eq!(unsafe { attribens_codebook_assign(20, 6, 3, 5, &mut cb) }, AttribensStatus::Ok);
    assert!(last_error().is_empty());
    unsafe {
        assert_eq!(attribens_codebook_n(cb), 6);
        assert_eq!(attribens_codebook_h(cb), 3);
        assert_eq!(attribens_codebook_num_groups(cb), 20);
    }
    let mut w = [0.0; 6];
    assert_eq!(unsafe { attribens_codebook_weight_vector(cb, -1, w.as_mut_ptr(), 6) }, AttribensStatus::Ok);
    assert_eq!(w, [1.0 / 6.0; 6]);
    assert_eq!(unsafe { attribens_codebook_weight_vector(cb, 3, w.as_mut_ptr(), 6) }, AttribensStatus::Ok);
    let expected = Codebook::assign(20, 6, 3, 5).unwrap().group_weight_vector(3).unwrap();
    assert_eq!(w.to_vec(), expected.0);
    assert_eq!(
        unsafe { attribens_codebook_weight_vector(cb, 3, w.as_mut_ptr(), 5) },
        AttribensStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { attribens_codebook_weight_vector(cb, 99, w.as_mut_ptr(), 6) },
        AttribensStatus::InvalidArgument
    );
    let mut covered = false;
    assert_eq!(unsafe { attribens_codebook_verify_coverage(cb, &mut covered) }, AttribensStatus::Ok);
    assert!(covered);
    unsafe { attribens_codebook_free(cb) };
    unsafe { attribens_codebook_free(ptr::null_mut()) };
}

#[test]
fn capacity_error_is_reported() {
    let mut cb = ptr::null_mut();
    let s = unsafe { attribens_codebook_assign(21, 6, 3, 0, &mut cb) };
    assert_eq!(s, AttribensStatus::Capacity);
    assert!(cb.is_null());
    assert!(last_error().contains("C(6,3) = 20"));
}

#[test]
fn codebook_from_json_roundtrip() {
    let json = CString::new(Codebook::assign(5, 4, 2, 1).unwrap().to_json()).unwrap();
    let mut cb = ptr::null_mut();
    assert_eq!(unsafe { attribens_codebook_from_json(json.as_ptr(), &mut cb) }, AttribensStatus::Ok);
    assert_eq!(unsafe { attribens_codebook_num_groups(cb) }, 5);
    unsafe { attribens_codebook_free(cb) };
    let bad = CString::new("{not json").unwrap();
    assert_eq!(unsafe { attribens_codebook_from_json(bad.as_ptr(), &mut cb) }, AttribensStatus::Format);
}

#[test]
fn null_handles_are_safe() {
    unsafe {
        assert_eq!(attribens_codebook_n(ptr::null()), 0);
        assert_eq!(attribens_ensemble_len(ptr::null()), 0);
        let mut out = [0.0; 2];
        assert_eq!(
            attribens_ensemble_counterfactual(ptr::null(), 0, 0, 0, out.as_mut_ptr(), 2),
            AttribensStatus::NullPointer
        );
    }
    let v = unsafe { CStr::from_ptr(attribens_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn ensemble_through_manifest_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_gaussian_mixture(2, 3, 2, 3.0, 4).unwrap();
    let codebook = Codebook::assign(data.len(), 4, 2, 8).unwrap();
    let text = codebook.to_json();
    std::fs::write(dir.path().join("codebook.json"), &text).unwrap();
    let schedule = make_schedule(8, 1e-3, 0.2).unwrap();
    let training = TrainingConfig {
        epochs: 3,
        hidden: vec![8],
        ..TrainingConfig::default()
    };
    let manifest = RunManifest {
        version: RUN_MANIFEST_VERSION,
        dataset: DatasetSpec {
            generator: data.descriptor.clone(),
            items: data.len(),
        },
        codebook: FileRef {
            path: "codebook.json".into(),
            sha256: sha256_hex(text.as_bytes()),
        },
        schedule: ScheduleSpec::from(&schedule),
        training: training.clone(),
        members: vec![],
        seeds: SeedBlock::from_master(0),
    };
    let path = dir.path().join("manifest.json");
    write_json(&path, &manifest).unwrap();
    let ens = EnsembleDenoiser::train(codebook, &data.items, &training, schedule).unwrap();
    let mut loaded = LoadedManifest::load(&path).unwrap();
    store_members(&mut loaded, &ens).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { attribens_ensemble_load(c_path.as_ptr(), &mut handle) }, AttribensStatus::Ok);
    assert_eq!(unsafe { attribens_ensemble_len(handle) }, 4);
    assert_eq!(unsafe { attribens_ensemble_sample_dim(handle) }, 2);

    let record = NoiseRecord::new(3, 9, 8, vec![2]);
    let u0 = [0.25; 4];
    let mut y = [0.0; 2];
    assert_eq!(
        unsafe { attribens_ensemble_generate(handle, u0.as_ptr(), 4, 3, 9, y.as_mut_ptr(), 2) },
        AttribensStatus::Ok
    );
    let expected = ens.generate(&WeightVector::uniform(4), &record).unwrap();
    assert_eq!(y.to_vec(), expected.sample.to_f64());

    assert_eq!(
        unsafe { attribens_ensemble_counterfactual(handle, 1, 3, 9, y.as_mut_ptr(), 2) },
        AttribensStatus::Ok
    );
    assert_eq!(y.to_vec(), ens.group_counterfactual(1, &record).unwrap().sample.to_f64());

    let mut j = [0.0; 8];
    assert_eq!(
        unsafe { attribens_ensemble_jacobian(handle, 3, 9, j.as_mut_ptr(), 8) },
        AttribensStatus::Ok
    );
    assert_eq!(j.to_vec(), compute_jacobian(&ens, &record).unwrap().entries);
    unsafe { attribens_ensemble_free(handle) };

    std::fs::write(dir.path().join("member_000.ensd"), b"tampered").unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { attribens_ensemble_load(c_path.as_ptr(), &mut handle) }, AttribensStatus::Format);
    assert!(last_error().contains("digest mismatch"));
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/attribens.h")).unwrap();
    for name in [
        "attribens_last_error",
        "attribens_codebook_assign",
        "attribens_codebook_free",
        "attribens_ensemble_load",
        "attribens_ensemble_jacobian",
        "ATTRIBENS_STATUS_BUFFER_TOO_SMALL",
        "typedef struct AttribensEnsemble AttribensEnsemble",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
