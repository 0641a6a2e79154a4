// Builds the small shared library the Linux collector dlopens as `lib_small`.

use std::env;
use std::path::PathBuf;
use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=shim/aslrkit_shim.c");
    if env::var("CARGO_CFG_TARGET_OS").as_deref() != Ok("linux") {
        return;
    }
    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("libaslrkit_shim.so");
    let compiler = cc::Build::new().get_compiler();
    let status = Command::new(compiler.path())
        .args(["-shared", "-fPIC", "-O2", "-o"])
        .arg(&out)
        .arg("shim/aslrkit_shim.c")
        .status()
        .expect("running the C compiler");
    assert!(status.success(), "building the shim library failed");
    println!("cargo:rustc-env=ASLRKIT_SHIM_PATH={}", out.display());
}
