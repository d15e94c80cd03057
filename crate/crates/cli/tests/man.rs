use clap::CommandFactory;
use singan_cli::Cli;

/// docs/singan.1 must match the parser. Regenerate with
/// `SINGAN_UPDATE_MAN=1 cargo test -p singan-cli --test man`.
#[test]
fn man_page_is_current() {
    let mut buf = Vec::new();
    clap_mangen::Man::new(Cli::command()).render(&mut buf).unwrap();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/singan.1");
    if std::env::var_os("SINGAN_UPDATE_MAN").is_some() {
        std::fs::create_dir_all(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs")).unwrap();
        std::fs::write(path, &buf).unwrap();
    }
    let committed = std::fs::read(path).expect("docs/singan.1 missing; regenerate it");
    assert!(committed == buf, "docs/singan.1 is stale; regenerate it");
}
