use std::process::Command;

// Embed a build identifier so every JSON summary records which binary wrote
// it. Falls back to the package version when git is unavailable (release
// tarballs, vendored builds).
fn main() {
    let git = Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_default();
    let id = if git.is_empty() {
        env!("CARGO_PKG_VERSION").to_string()
    } else {
        git
    };
    println!("cargo:rustc-env=COOPBRANCH_BUILD={id}");
}
