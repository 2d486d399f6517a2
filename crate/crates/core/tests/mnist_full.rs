//! The full 28×28 MNIST run (|G| = 6272). Slow; run with
//! `cargo test --release -p equibias --test mnist_full -- --ignored`.

use std::path::Path;

use equibias::experiment::{run, ExperimentConfig};
use equibias::gcnn::ArchKind;

#[test]
#[ignore = "full-resolution run, minutes to hours"]
fn mnist_28x28_gcnn_separates() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut cfg = ExperimentConfig::load(&configs.join("mnist_28x28.json")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    let out = run(&cfg, &configs).unwrap();
    let r = &out.replicas[0];
    assert_eq!(r.dataset.dim(), 6272);
    let g = r.architectures.iter().find(|a| a.kind == ArchKind::Gcnn).unwrap();
    let last = g.trace.as_ref().unwrap().last().clone();
    eprintln!("final loss {:.3e}, Fourier 2/L norm {:.1}", last.loss, last.fourier_schatten_2l);
    assert!(last.loss < 1e-2);
}
