use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfsnid::network::{build_pyramid, NetworkConfig, Sfsnid, SCALES};
use sfsnid::params::ParamStore;
use sfsnid::sfii::{Blp, Bnm, Fsda, SfiiBlock, SpectrumFilter};
use sfsnid::{Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn input(seed: u64, shape: Vec<usize>) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut rng(seed))
}

#[test]
fn spectrum_filter_zero_path() {
    let mut store = ParamStore::new();
    let sf = SpectrumFilter::new(&mut store, "sf", 4, &mut rng(0));
    let x = input(1, vec![2, 4, 5, 5]);
    let tape = Tape::new();
    let p = store.bind(&tape);
    let xv = tape.constant(x.clone());
    // with random weights the residual structure still holds: out − in = Ṡ ≠ 0
    assert!(sf.forward(&p, &xv).unwrap().value().max_abs_diff(&x) > 0.0);
    store.fill_prefix("sf", 0.0);
    let p = store.bind(&tape);
    assert_eq!(sf.forward(&p, &xv).unwrap().value(), &x);
}

#[test]
fn fsda_zero_path() {
    let mut store = ParamStore::new();
    let fs = Fsda::new(&mut store, "fs", 3, &mut rng(0));
    store.fill_prefix("fs", 0.0);
    let x = input(2, vec![1, 3, 8, 8]);
    let tape = Tape::new();
    let out = fs.forward(&store.bind(&tape), &tape.constant(x.clone())).unwrap();
    assert!(out.value().max_abs_diff(&x) < 1e-6);
}

#[test]
fn fdp_with_zero_filters_is_layer_norm() {
    let mut store = ParamStore::new();
    let blp = Blp::new(&mut store, "blp", 3, 8, &mut rng(0));
    for branch in ["blp.fs_q", "blp.fs_k", "blp.fs_v"] {
        store.fill_prefix(branch, 0.0);
    }
    let x = input(3, vec![1, 3, 8, 8]);
    let tape = Tape::new();
    let xv = tape.constant(x);
    let (q, k, v) = blp.fdp(&store.bind(&tape), &xv).unwrap();
    let ln = xv.layer_norm().unwrap();
    for t in [&q, &k, &v] {
        assert!(t.value().max_abs_diff(ln.value()) < 1e-6);
    }
    let constant = tape.constant(Tensor::full(vec![1, 3, 8, 8], 0.7));
    let (q, _, _) = blp.fdp(&store.bind(&tape), &constant).unwrap();
    assert!(q.value().max_abs() < 1e-9);
}

#[test]
fn fdp_branches_are_independent() {
    let mut store = ParamStore::new();
    let blp = Blp::new(&mut store, "blp", 3, 8, &mut rng(4));
    let tape = Tape::new();
    let (q, k, _) = blp.fdp(&store.bind(&tape), &tape.constant(input(5, vec![1, 3, 8, 8]))).unwrap();
    assert!(q.value().max_abs_diff(k.value()) > 1e-6);
}

#[test]
fn blp_zero_path() {
    let mut store = ParamStore::new();
    let blp = Blp::new(&mut store, "blp", 4, 8, &mut rng(0));
    store.fill_prefix("blp", 0.0);
    let x = input(6, vec![1, 4, 12, 8]);
    let tape = Tape::new();
    let out = blp.forward(&store.bind(&tape), &tape.constant(x.clone())).unwrap();
    assert_eq!(out.value(), &x);
}

#[test]
fn bnm_zero_fusion_is_identity() {
    let mut store = ParamStore::new();
    let bnm = Bnm::new(&mut store, "bnm", 2, &mut rng(0));
    store.fill_prefix("bnm.fuse", 0.0);
    let x = input(7, vec![1, 2, 6, 6]);
    let tape = Tape::new();
    let out = bnm.forward(&store.bind(&tape), &tape.constant(x.clone())).unwrap();
    assert_eq!(out.value(), &x);
}

#[test]
fn zero_block_is_identity_and_random_block_is_finite() {
    let mut store = ParamStore::new();
    let block = SfiiBlock::new(&mut store, "b", 4, 8, &mut rng(0));
    let x = input(8, vec![1, 4, 8, 8]).map(|v| 10.0 * v);
    let tape = Tape::new();
    let out = block.forward(&store.bind(&tape), &tape.constant(x.clone())).unwrap();
    assert!(out.value().is_finite());
    let again = block.forward(&store.bind(&tape), &tape.constant(x.clone())).unwrap();
    assert_eq!(out.value(), again.value());
    store.fill_prefix("b", 0.0);
    let out = block.forward(&store.bind(&tape), &tape.constant(x.clone())).unwrap();
    assert!(out.value().max_abs_diff(&x) < 1e-6);
}

#[test]
fn zeroed_output_conv_gives_its_bias() {
    let mut store = ParamStore::new();
    let net = Sfsnid::new(&NetworkConfig::tiny(), &mut store, &mut rng(0)).unwrap();
    let bias = [0.25, -0.5, 0.75];
    for s in 0..SCALES {
        let conv = net.conv_out(s);
        store.get_mut(conv.weight).data_mut().fill(0.0);
        store.get_mut(conv.bias).data_mut().copy_from_slice(&bias);
    }
    let img = Tensor::uniform(vec![2, 3, 32, 16], 0.0, 1.0, &mut rng(9));
    let tape = Tape::new();
    let pyr = build_pyramid(&img).unwrap().levels.map(|t| tape.constant(t));
    let preds = net.forward(&store.bind_frozen(&tape), &pyr).unwrap();
    for p in &preds {
        let (b, _, h, w) = p.value().dims4().unwrap();
        for (i, v) in p.value().data().iter().enumerate() {
            assert_eq!(*v, bias[(i / (h * w)) % 3], "batch of {b}");
        }
    }
}
