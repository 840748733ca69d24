use std::path::PathBuf;

fn main() {
    let dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config = cbindgen::Config::from_file(dir.join("cbindgen.toml")).expect("cbindgen.toml");
    let header = dir.join("include").join("evomax.h");
    std::fs::create_dir_all(header.parent().unwrap()).unwrap();
    match cbindgen::generate_with_config(&dir, config) {
        // write_to_file leaves the file untouched when the content is unchanged
        Ok(b) => {
            b.write_to_file(&header);
        }
        Err(e) => println!("cargo:warning=header generation failed: {e}"),
    }
}
