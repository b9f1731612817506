use std::ffi::CStr;
use std::ptr;

use crctc_ffi::*;

fn vocab(n: usize) -> *mut CrctcVocab {
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { crctc_vocab_synthetic(n, &mut v) }, CrctcStatus::Ok);
    v
}

fn lattice(probs: &[f64], frames: usize, width: usize) -> *mut CrctcLattice {
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { crctc_lattice_from_probs(probs.as_ptr(), frames, width, &mut l) }, CrctcStatus::Ok);
    l
}

fn last_error() -> String {
    let p = crctc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn ctc_loss_of_two_frame_example() {
    // z = [[0.5, 0.5], [0.5, 0.5]] over {blank, a}; paths for "a": aa, εa, aε
    let v = vocab(1);
    let l = lattice(&[0.5, 0.5, 0.5, 0.5], 2, 2);
    let mut loss = 0.0;
    let y = [0usize];
    assert_eq!(unsafe { crctc_ctc_loss(l, v, y.as_ptr(), 1, &mut loss) }, CrctcStatus::Ok);
    assert!((loss + 0.75f64.ln()).abs() < 1e-12);
    unsafe {
        crctc_lattice_free(l);
        crctc_vocab_free(v);
    }
}

#[test]
fn gradients_fill_caller_buffers() {
    let v = vocab(2);
    let logits = [0.1, -0.3, 0.7, 1.2, 0.0, -0.5, 0.3, 0.3, 0.9];
    let y = [0usize, 1];
    let (mut loss, mut grad) = (0.0, [0.0; 9]);
    let st = unsafe { crctc_ctc_grad(logits.as_ptr(), 3, 3, v, y.as_ptr(), 2, &mut loss, grad.as_mut_ptr()) };
    assert_eq!(st, CrctcStatus::Ok);
    assert!(loss > 0.0);
    for row in grad.chunks(3) {
        assert!(row.iter().sum::<f64>().abs() < 1e-12);
    }

    let (mut cr, mut ga, mut gb) = (0.0, [0.0; 9], [0.0; 9]);
    let st = unsafe {
        crctc_cr_loss(
            logits.as_ptr(),
            logits.as_ptr(),
            ptr::null(),
            ptr::null(),
            3,
            3,
            v,
            y.as_ptr(),
            2,
            0.2,
            CrctcTargetMode::StopGradient,
            &mut cr,
            ga.as_mut_ptr(),
            gb.as_mut_ptr(),
        )
    };
    assert_eq!(st, CrctcStatus::Ok);
    // identical branches: the regularizer vanishes and the total is plain CTC
    assert!((cr - loss).abs() < 1e-12);
    for ((a, b), g) in ga.iter().zip(&gb).zip(&grad) {
        assert!((a - 0.5 * g).abs() < 1e-12 && (b - 0.5 * g).abs() < 1e-12);
    }

    let (mut sr, mut gs) = (0.0, [0.0; 9]);
    let st = unsafe { crctc_sr_loss(logits.as_ptr(), 3, 3, v, y.as_ptr(), 2, 0.2, &mut sr, gs.as_mut_ptr()) };
    assert_eq!(st, CrctcStatus::Ok);
    assert!(sr >= loss);
    unsafe { crctc_vocab_free(v) };
}

#[test]
fn decoding_and_peak_stats() {
    let v = vocab(2);
    // greedy path a a ε b
    let probs = [0.05, 0.9, 0.05, 0.1, 0.8, 0.1, 0.99, 0.005, 0.005, 0.2, 0.1, 0.7];
    let l = lattice(&probs, 4, 3);
    assert_eq!(unsafe { crctc_lattice_frames(l) }, 4);
    assert_eq!(unsafe { crctc_lattice_width(l) }, 3);

    let (mut out, mut len) = ([usize::MAX; 4], 0usize);
    assert_eq!(unsafe { crctc_decode_greedy(l, v, out.as_mut_ptr(), 4, &mut len) }, CrctcStatus::Ok);
    assert_eq!(&out[..len], &[0, 1]);
    assert_eq!(unsafe { crctc_decode_prefix(l, v, 4, out.as_mut_ptr(), 4, &mut len) }, CrctcStatus::Ok);
    assert_eq!(&out[..len], &[0, 1]);

    let st = unsafe { crctc_decode_greedy(l, v, out.as_mut_ptr(), 1, &mut len) };
    assert_eq!(st, CrctcStatus::Capacity);
    assert_eq!(len, 2);
    assert!(last_error().contains("buffer"));

    let mut stats = CrctcPeakStats::default();
    assert_eq!(unsafe { crctc_peak_stats(l, v, &mut stats) }, CrctcStatus::Ok);
    assert!((stats.mean_nonblank_duration - 1.5).abs() < 1e-12);
    assert!((stats.mean_blank_emit_prob - 0.99).abs() < 1e-12);
    assert!((stats.mean_nonblank_emit_prob - 0.8).abs() < 1e-12);
    assert_eq!((stats.emissions, stats.nonblank_frames, stats.blank_frames), (2, 3, 1));

    let mut smoothed = [0.0; 12];
    assert_eq!(unsafe { crctc_smooth(l, smoothed.as_mut_ptr()) }, CrctcStatus::Ok);
    for row in smoothed.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let mut copy = [0.0; 12];
    assert_eq!(unsafe { crctc_lattice_probs(l, copy.as_mut_ptr()) }, CrctcStatus::Ok);
    assert_eq!(copy, probs);
    unsafe {
        crctc_lattice_free(l);
        crctc_vocab_free(v);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let v = vocab(1);
    let l = lattice(&[0.5, 0.5, 0.5, 0.5], 2, 2);
    let mut loss = 0.0;

    let y = [0usize, 0];
    assert_eq!(unsafe { crctc_ctc_loss(l, v, y.as_ptr(), 2, &mut loss) }, CrctcStatus::Infeasible);
    let y = [5usize];
    assert_eq!(unsafe { crctc_ctc_loss(l, v, y.as_ptr(), 1, &mut loss) }, CrctcStatus::InvalidInput);
    assert_eq!(unsafe { crctc_ctc_loss(ptr::null(), v, y.as_ptr(), 1, &mut loss) }, CrctcStatus::NullPointer);
    assert!(last_error().contains("lattice"));
    assert_eq!(unsafe { crctc_ctc_loss(l, v, ptr::null(), 1, &mut loss) }, CrctcStatus::NullPointer);

    let mut bad = ptr::null_mut();
    let st = unsafe { crctc_lattice_from_probs([0.7, 0.7].as_ptr(), 1, 2, &mut bad) };
    assert_eq!(st, CrctcStatus::InvalidInput);
    assert!(bad.is_null());
    let st = unsafe { crctc_lattice_from_logits([f64::NAN, 0.0].as_ptr(), 1, 2, &mut bad) };
    assert_eq!(st, CrctcStatus::InvalidInput);
    let st = unsafe { crctc_lattice_from_logits(ptr::null(), usize::MAX, 2, &mut bad) };
    assert_eq!(st, CrctcStatus::Capacity);

    let mut out = [0usize; 2];
    let mut len = 0;
    assert_eq!(unsafe { crctc_decode_prefix(l, v, 0, out.as_mut_ptr(), 2, &mut len) }, CrctcStatus::InvalidInput);

    unsafe {
        crctc_lattice_free(l);
        crctc_vocab_free(v);
        crctc_lattice_free(ptr::null_mut());
        crctc_vocab_free(ptr::null_mut());
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(crctc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
