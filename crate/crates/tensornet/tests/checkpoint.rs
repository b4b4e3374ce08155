use gazegest_tensornet::layers::{Linear, MergeLastTwo};
use gazegest_tensornet::{Checkpoint, ModelGraph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = ModelGraph::new("toy", 2, 3, 4);
    g.push(MergeLastTwo::new());
    g.push(Linear::new("fc", 6, 4, &mut rng));
    g
}

#[test]
fn checkpoint_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let src = graph(1);
    let ck = Checkpoint::from_graph(&src, &[("seed", "1".into())]);
    assert_eq!(ck.meta("seed"), Some("1"));
    let (m, b) = (dir.path().join("toy.manifest"), dir.path().join("toy.bin"));
    ck.write(&m, &b).unwrap();
    let back = Checkpoint::read(&m, &b).unwrap();
    assert_eq!(back, ck);
    let mut dst = graph(2);
    assert_ne!(dst.snapshot(), src.snapshot());
    back.load_into(&mut dst).unwrap();
    assert_eq!(dst.snapshot(), src.snapshot());
    let x = Tensor::from_fn(&[1, 2, 3], |i| i as f64);
    assert_eq!(dst.forward(&x).unwrap(), graph(1).forward(&x).unwrap());
}

#[test]
fn tampered_blob_is_rejected() {
    let mut ck = Checkpoint::from_graph(&graph(1), &[]);
    ck.blob[3] ^= 1;
    assert!(ck.load_into(&mut graph(1)).is_err());
}
