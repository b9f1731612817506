use std::path::Path;
use std::process::Command;

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/crctc.h");

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(HEADER).expect("build script writes the header");
    for name in [
        "crctc_last_error_message",
        "crctc_version",
        "crctc_vocab_synthetic",
        "crctc_vocab_free",
        "crctc_lattice_from_logits",
        "crctc_lattice_from_probs",
        "crctc_lattice_free",
        "crctc_lattice_frames",
        "crctc_lattice_width",
        "crctc_lattice_probs",
        "crctc_ctc_loss",
        "crctc_ctc_grad",
        "crctc_cr_loss",
        "crctc_sr_loss",
        "crctc_smooth",
        "crctc_decode_greedy",
        "crctc_decode_prefix",
        "crctc_peak_stats",
    ] {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["CrctcStatus", "CrctcTargetMode", "CrctcPeakStats", "CrctcVocab", "CrctcLattice"] {
        assert!(text.contains(ty), "{ty} missing from header");
    }
    assert!(text.contains("CRCTC_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = std::env::temp_dir().join(format!("crctc-header-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("probe.c");
    std::fs::write(
        &src,
        "#include \"crctc.h\"\nint main(void) { CrctcVocab *v = 0; return crctc_vocab_synthetic(3, &v) == CRCTC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let include = Path::new(HEADER).parent().unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}
