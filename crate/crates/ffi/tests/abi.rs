use std::ffi::{CStr, CString};
use std::ptr;

use lowrank_sketch::linalg::{matmul, DenseMatrix};
use lowrank_sketch::rng::rng_from_seed;
use lowrank_sketch::scw::scw_loss;
use lowrank_sketch::sketch::sparse_random_sketch;
use lowrank_sketch_ffi::*;

fn matrix(a: &DenseMatrix) -> *mut LsMatrix {
    let mut out = ptr::null_mut();
    let st = unsafe { ls_matrix_new(a.rows(), a.cols(), a.as_slice().as_ptr(), &mut out) };
    assert_eq!(st, LsStatus::Ok);
    out
}

fn last_error() -> String {
    let p = ls_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn read(m: *const LsMatrix) -> Vec<f64> {
    let len = unsafe { ls_matrix_rows(m) * ls_matrix_cols(m) };
    let mut buf = vec![0.0; len];
    assert_eq!(
        unsafe { ls_matrix_copy_data(m, buf.as_mut_ptr(), len) },
        LsStatus::Ok
    );
    buf
}

#[test]
fn loss_matches_library() {
    let a = DenseMatrix::random_normal(9, 6, &mut rng_from_seed(1));
    let h = matrix(&a);
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(ls_sketch_sparse_random(3, 9, 5, &mut s), LsStatus::Ok);
        let mut loss = 0.0;
        assert_eq!(ls_scw_loss(h, s, 2, &mut loss), LsStatus::Ok);
        let expected = scw_loss(&a, &sparse_random_sketch(3, 9, 5).unwrap(), 2).unwrap();
        assert_eq!(loss.to_bits(), expected.to_bits());
        let (mut m, mut n) = (0, 0);
        assert_eq!(ls_sketch_shape(s, &mut m, &mut n), LsStatus::Ok);
        assert_eq!((m, n), (3, 9));
        let mut sa = ptr::null_mut();
        assert_eq!(ls_sketch_apply(s, h, &mut sa), LsStatus::Ok);
        assert_eq!((ls_matrix_rows(sa), ls_matrix_cols(sa)), (3, 6));
        ls_matrix_free(sa);
        ls_sketch_free(s);
        ls_matrix_free(h);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            ls_matrix_new(2, 2, ptr::null(), &mut out),
            LsStatus::NullPointer
        );
        assert!(out.is_null());
        let data = [1.0, f64::NAN, 0.0, 1.0];
        assert_eq!(
            ls_matrix_new(2, 2, data.as_ptr(), ptr::null_mut()),
            LsStatus::NullPointer
        );

        let mut s = ptr::null_mut();
        assert_eq!(
            ls_sketch_sparse_random(0, 4, 1, &mut s),
            LsStatus::InvalidArgument
        );
        assert!(last_error().contains("m"));

        let a = matrix(&DenseMatrix::identity(3));
        assert_eq!(ls_sketch_sparse_random(2, 4, 1, &mut s), LsStatus::Ok);
        let mut loss = 0.0;
        assert_eq!(ls_scw_loss(a, s, 1, &mut loss), LsStatus::DimensionMismatch);
        assert!(last_error().contains("mismatch"));
        assert_eq!(
            ls_scw_loss(ptr::null(), s, 1, &mut loss),
            LsStatus::NullPointer
        );

        let missing = CString::new("/no/such/file.skch").unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(ls_sketch_load(missing.as_ptr(), &mut t), LsStatus::Io);
        ls_sketch_free(s);
        ls_matrix_free(a);
        ls_matrix_free(ptr::null_mut());
        ls_sketch_free(ptr::null_mut());
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let a = DenseMatrix::random_normal(5, 4, &mut rng_from_seed(2));
    unsafe {
        let h = matrix(&a);
        let mpath = CString::new(dir.path().join("a.dmat").to_str().unwrap()).unwrap();
        assert_eq!(ls_matrix_save(h, mpath.as_ptr()), LsStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ls_matrix_load(mpath.as_ptr(), &mut back), LsStatus::Ok);
        assert_eq!(read(back), a.as_slice());

        let (mut s1, mut s2, mut c) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(ls_sketch_sparse_random(2, 5, 1, &mut s1), LsStatus::Ok);
        assert_eq!(ls_sketch_sparse_random(3, 5, 2, &mut s2), LsStatus::Ok);
        assert_eq!(ls_sketch_concat(s1, s2, &mut c), LsStatus::Ok);
        let spath = CString::new(dir.path().join("s.skch").to_str().unwrap()).unwrap();
        assert_eq!(ls_sketch_save(c, spath.as_ptr()), LsStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ls_sketch_load(spath.as_ptr(), &mut loaded), LsStatus::Ok);
        let (mut m, mut n) = (0, 0);
        ls_sketch_shape(loaded, &mut m, &mut n);
        assert_eq!((m, n), (5, 5));
        let (mut l1, mut l2) = (0.0, 0.0);
        ls_scw_loss(h, c, 2, &mut l1);
        ls_scw_loss(h, loaded, 2, &mut l2);
        assert_eq!(l1.to_bits(), l2.to_bits());
        for p in [s1, s2, c, loaded] {
            ls_sketch_free(p);
        }
        ls_matrix_free(h);
        ls_matrix_free(back);
    }
}

#[test]
fn training_through_the_boundary() {
    let mut rng = rng_from_seed(3);
    let basis = DenseMatrix::random_normal(2, 6, &mut rng);
    let set: Vec<*mut LsMatrix> = (0..6)
        .map(|_| {
            let a = matmul(&DenseMatrix::random_normal(10, 2, &mut rng), &basis).unwrap();
            matrix(
                &a.add(&DenseMatrix::random_normal(10, 6, &mut rng).scaled(0.05))
                    .unwrap(),
            )
        })
        .collect();
    let handles: Vec<*const LsMatrix> = set.iter().map(|&p| p as *const _).collect();
    let mut opts = ls_train_options_default();
    assert_eq!(opts.lr, 0.1);
    opts.k = 2;
    opts.lr = 0.0;
    opts.iterations = 5;
    opts.seed = 11;
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(
            ls_train(handles.as_ptr(), handles.len(), 3, &opts, &mut s),
            LsStatus::Ok
        );
        let mut init = ptr::null_mut();
        ls_sketch_sparse_random(3, 10, 11, &mut init);
        let (mut a, mut b) = (0.0, 0.0);
        ls_scw_loss(handles[0], s, 2, &mut a);
        ls_scw_loss(handles[0], init, 2, &mut b);
        assert_eq!(a.to_bits(), b.to_bits());

        opts.lr = 1e300;
        let mut d = ptr::null_mut();
        assert_eq!(
            ls_train(handles.as_ptr(), handles.len(), 3, &opts, &mut d),
            LsStatus::Divergence
        );
        opts.lr = 0.1;
        opts.mode = 9;
        assert_eq!(
            ls_train(handles.as_ptr(), handles.len(), 3, &opts, &mut d),
            LsStatus::InvalidArgument
        );
        assert!(d.is_null());
        ls_sketch_free(s);
        ls_sketch_free(init);
        for p in set {
            ls_matrix_free(p);
        }
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(ls_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
