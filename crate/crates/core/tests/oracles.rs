mod common;

use mmsg_core::bmc::{bmc_forward, bmc_forward_batch, BmcConfig, BmcParams, GraphBatch};
use mmsg_core::chem::parse;
use mmsg_core::diff::{ParamStore, Tape, Tensor};
use mmsg_core::featurize::featurize;
use mmsg_core::seq::{biased_attention, BlockParams, SeqConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{alg1, attention, max_abs_diff, tensor_rows};

fn bmc(hidden: usize, depth: usize, seed: u64) -> (ParamStore, BmcParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = BmcParams::new(&mut store, "bmc", BmcConfig::new(hidden, depth).unwrap(), &mut rng);
    (store, p)
}

#[test]
fn bmc_matches_straight_line_transcription() {
    for smiles in ["CC", "CCO", "C", "C=O", "CC(C)O"] {
        for depth in 1..=3 {
            for seed in 0..3 {
                let g = parse(smiles).unwrap();
                let f = featurize(&g);
                let (store, p) = bmc(8, depth, seed);
                let got = bmc_forward(&g, &f, &store, &p).unwrap();
                let want = alg1(&g, &f, &store, &p);
                let err = [
                    max_abs_diff(&[got.h_v.clone()], &[want.h_v.clone()]),
                    max_abs_diff(&[got.h_e.clone()], &[want.h_e.clone()]),
                    max_abs_diff(&tensor_rows(&got.node_hidden), want.nodes.last().unwrap()),
                    max_abs_diff(&tensor_rows(&got.edge_hidden), want.edges.last().unwrap()),
                ];
                for e in err {
                    assert!(e < 1e-12, "{smiles} depth {depth} seed {seed}: {err:?}");
                }
            }
        }
    }
}

#[test]
fn every_step_matches_oracle() {
    let g = parse("CCO").unwrap();
    let f = featurize(&g);
    let (store, p) = bmc(6, 3, 11);
    let mut tape = Tape::new();
    let trace = bmc_forward_batch(&mut tape, &store, &p, &GraphBatch::single(&g)).unwrap();
    let want = alg1(&g, &f, &store, &p);
    assert_eq!(trace.node_steps.len(), want.nodes.len());
    for t in 0..want.nodes.len() {
        assert!(max_abs_diff(&tensor_rows(tape.value(trace.node_steps[t])), &want.nodes[t]) < 1e-12);
        assert!(max_abs_diff(&tensor_rows(tape.value(trace.edge_steps[t])), &want.edges[t]) < 1e-12);
    }
}

#[test]
fn methane_has_zero_edge_readout() {
    let g = parse("C").unwrap();
    let (store, p) = bmc(4, 2, 0);
    let out = bmc_forward(&g, &featurize(&g), &store, &p).unwrap();
    assert_eq!(out.h_e, vec![0.0; 4]);
    assert!(out.h_v.iter().all(|v| v.is_finite()));
}

#[test]
fn relabeled_molecule_gives_relabeled_hiddens() {
    let a = parse("CCO").unwrap();
    let b = parse("OCC").unwrap();
    let (store, p) = bmc(8, 2, 5);
    let ha = bmc_forward(&a, &featurize(&a), &store, &p).unwrap();
    let hb = bmc_forward(&b, &featurize(&b), &store, &p).unwrap();
    // atom i of CCO is atom 2 - i of OCC
    for i in 0..3 {
        for k in 0..8 {
            assert!((ha.node_hidden.get(i, k) - hb.node_hidden.get(2 - i, k)).abs() < 1e-12);
        }
    }
}

fn attention_setup(d: usize, heads: usize, max_len: usize, seed: u64) -> (ParamStore, SeqConfig, BlockParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let block = BlockParams::new(&mut store, "blk", d, 2 * d, &mut rng);
    let config = SeqConfig { vocab_size: 4, gru_hidden: 2, gru_layers: 1, model_dim: d, heads, layers: 1, max_len, ffn_dim: 2 * d };
    (store, config, block)
}

#[test]
fn hand_sized_attention_with_bias() {
    // n = 2 tokens, d = 4, one head
    let (store, config, block) = attention_setup(4, 1, 3, 1);
    let rows = vec![vec![0.5, -1.0, 0.25, 2.0], vec![-0.75, 0.1, 1.5, -0.5]];
    let bias_full = [0.3, -0.8, 9.0];
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::from_rows(&rows));
    let b = tape.constant(Tensor::from_rows(&[bias_full]));
    let out = biased_attention(&mut tape, &store, &config, &block, h, &[(0, 2)], Some(b)).unwrap();
    let (want, weights) = attention(
        &store, &block.query, &block.key, &block.value, &block.out, &rows, 1,
        Some(&[bias_full[..2].to_vec()]),
    );
    assert!(max_abs_diff(&tensor_rows(tape.value(out)), &want) < 1e-12);
    for w in &weights[0] {
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn multi_head_multi_molecule_attention() {
    let (store, config, block) = attention_setup(8, 2, 6, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    use rand::Rng;
    let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let bias: Vec<Vec<f64>> = (0..2).map(|_| (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let spans = [(0, 4), (4, 5)];
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::from_rows(&rows));
    let b = tape.constant(Tensor::from_rows(&bias));
    let out = tape_rows(&mut tape, &store, &config, &block, h, &spans, b);
    for (m, &(start, n)) in spans.iter().enumerate() {
        let per_head: Vec<Vec<f64>> = (0..2).map(|hd| bias[m][hd * 6..hd * 6 + n].to_vec()).collect();
        let (want, _) = attention(
            &store, &block.query, &block.key, &block.value, &block.out,
            &rows[start..start + n], 2, Some(&per_head),
        );
        assert!(max_abs_diff(&out[start..start + n], &want) < 1e-12);
    }
}

fn tape_rows(
    tape: &mut Tape,
    store: &ParamStore,
    config: &SeqConfig,
    block: &BlockParams,
    h: mmsg_core::diff::Var,
    spans: &[(usize, usize)],
    b: mmsg_core::diff::Var,
) -> Vec<Vec<f64>> {
    let out = biased_attention(tape, store, config, block, h, spans, Some(b)).unwrap();
    tensor_rows(tape.value(out))
}
