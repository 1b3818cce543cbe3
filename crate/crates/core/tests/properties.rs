mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mmsg_core::bmc::{bmc_forward_batch, BmcConfig, BmcParams, GraphBatch};
use mmsg_core::chem::{parse, TokenDictionary};
use mmsg_core::config::RunConfig;
use mmsg_core::diff::{ParamStore, Tape, Tensor};
use mmsg_core::featurize::featurize;
use mmsg_core::model::{MmsgModel, ModelConfig, MolBatch, PreparedMolecule, TargetScaler, TaskType};
use mmsg_core::train::{random_split, roc_auc, scaffold_split, NoamSchedule, SplitAssignment, SplitKind, SplitRatios};

fn assert_partition(s: &SplitAssignment, n: usize) {
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
}

const MOLECULES: [&str; 8] = [
    "CCO",
    "c1ccccc1O",
    "CC(=O)Nc1ccc(O)cc1",
    "C1CCC2CCCCC2C1",
    "OC(=O)C=CC(=O)O",
    "Clc1ccc(Cl)cc1",
    "CC(C)(C)c1ccncc1",
    "N#CC1CC1",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_sum_matches_brute_force_bitwise(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..40),
        segs in prop::collection::vec(0usize..5, 40),
    ) {
        let seg = &segs[..rows.len()];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&rows));
        let s = tape.segment_sum(x, seg, 5).unwrap();
        let want = common::segment_sum(&rows, seg, 5);
        let got = common::tensor_rows(tape.value(s));
        for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
            prop_assert_eq!(g.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn roc_auc_equals_pair_enumeration(
        data in prop::collection::vec((0u8..20, any::<bool>()), 2..200),
    ) {
        let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 7.0).collect();
        let labels: Vec<bool> = data.iter().map(|&(_, l)| l).collect();
        match roc_auc(&scores, &labels) {
            Ok(v) => prop_assert_eq!(v, common::auc_pairwise(&scores, &labels)),
            Err(_) => prop_assert!(labels.iter().all(|&l| l) || labels.iter().all(|&l| !l)),
        }
    }

    #[test]
    fn splits_partition_and_colocate(n in 10usize..300, seed in any::<u64>(), groups in 1usize..40) {
        let r = random_split(n, SplitRatios::default(), seed).unwrap();
        assert_partition(&r, n);
        prop_assert_eq!(r.sizes(), SplitRatios::default().sizes(n));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keys: Vec<String> = (0..n).map(|_| format!("g{}", rand::Rng::gen_range(&mut rng, 0..groups))).collect();
        let s = scaffold_split(&keys, SplitRatios::default(), seed).unwrap();
        assert_partition(&s, n);
        let lab = s.labels(n);
        for i in 0..n {
            for j in 0..n {
                if keys[i] == keys[j] {
                    prop_assert_eq!(lab[i], lab[j]);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        logits in prop::collection::vec(prop::collection::vec(-30f64..30.0, 6), 1..6),
        bias in prop::collection::vec(-50f64..50.0, 6),
        shift in -100f64..100.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&logits));
        let b = tape.constant(Tensor::row_vector(&bias));
        let biased = tape.add_row(x, b).unwrap();
        let w = tape.softmax_rows(biased);
        for r in 0..logits.len() {
            prop_assert!((tape.value(w).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<Vec<f64>> = logits.iter().map(|row| row.iter().map(|v| v + shift).collect()).collect();
        let y = tape.constant(Tensor::from_rows(&shifted));
        let biased2 = tape.add_row(y, b).unwrap();
        let w2 = tape.softmax_rows(biased2);
        prop_assert!(tape.value(w).max_abs_diff(tape.value(w2)) < 1e-12);
    }

    #[test]
    fn schedule_is_continuous_and_hits_anchors(
        warmup in 1usize..500,
        extra in 1usize..2000,
        init_k in 0usize..3,
        max_k in 0usize..3,
    ) {
        let inits: [f64; 3] = [1e-3, 1e-4, 1e-5];
        let maxes = [2e-3, 2e-4, 2e-5];
        let (init, max) = (inits[init_k].min(maxes[max_k]), maxes[max_k]);
        let fin = init;
        let s = NoamSchedule::new(init, max, fin, warmup, warmup + extra).unwrap();
        prop_assert_eq!(s.lr(0), init);
        prop_assert!(((s.lr(warmup) - max) / max).abs() < 1e-12);
        prop_assert!(((s.lr(warmup + extra) - fin) / fin).abs() < 1e-12);
        // the ramp, extended to its end point, meets the decay start
        let ramp_end = init + (max - init) * (warmup as f64 / warmup as f64);
        prop_assert!(((ramp_end - s.lr(warmup)) / max).abs() < 1e-12);
        for step in 1..warmup {
            prop_assert!(s.lr(step) >= s.lr(step - 1));
        }
    }

    #[test]
    fn run_config_round_trips(
        hidden in 1usize..512,
        heads in 1usize..8,
        seeds in prop::collection::vec(any::<u64>(), 1..6),
        lr in 1e-6f64..1e-2,
        bias_enabled in any::<bool>(),
        scaffold in any::<bool>(),
    ) {
        let c = RunConfig {
            hidden_dim: hidden,
            heads,
            seeds,
            max_lr: lr,
            bias_enabled,
            split: if scaffold { SplitKind::Scaffold } else { SplitKind::Random },
            dataset_name: Some("x".into()),
            ..Default::default()
        };
        prop_assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn scaler_inverts(values in prop::collection::vec(-10f64..10.0, 2..30), probe in -20f64..20.0) {
        let labels = Tensor::new(values.len(), 1, values.clone()).unwrap();
        let mask = Tensor::filled(values.len(), 1, 1.0);
        let rows: Vec<usize> = (0..values.len()).collect();
        let s = TargetScaler::fit(&labels, &mask, &rows);
        prop_assert!((s.inverse(0, s.transform(0, probe)) - probe).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hiddens_are_permutation_equivariant(mol in 0usize..MOLECULES.len(), seed in any::<u64>()) {
        let g = parse(MOLECULES[mol]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atom_perm: Vec<usize> = (0..g.atoms.len()).collect();
        atom_perm.shuffle(&mut rng);
        let mut edge_perm: Vec<usize> = (0..g.edges.len()).collect();
        edge_perm.shuffle(&mut rng);
        let h = g.permuted(&atom_perm, &edge_perm);

        let mut store = ParamStore::new();
        let p = BmcParams::new(&mut store, "bmc", BmcConfig::new(8, 3).unwrap(), &mut rng);
        let (fg, fh) = (featurize(&g), featurize(&h));
        let mut tape = Tape::new();
        let tg = bmc_forward_batch(&mut tape, &store, &p, &GraphBatch::new(&[(&g, &fg)])).unwrap();
        let th = bmc_forward_batch(&mut tape, &store, &p, &GraphBatch::new(&[(&h, &fh)])).unwrap();
        for t in 0..tg.node_steps.len() {
            let (a, b) = (tape.value(tg.node_steps[t]), tape.value(th.node_steps[t]));
            for (i, &pi) in atom_perm.iter().enumerate() {
                for k in 0..8 {
                    prop_assert!((a.get(i, k) - b.get(pi, k)).abs() < 1e-9);
                }
            }
            let (a, b) = (tape.value(tg.edge_steps[t]), tape.value(th.edge_steps[t]));
            for (e, &pe) in edge_perm.iter().enumerate() {
                for k in 0..8 {
                    prop_assert!((a.get(e, k) - b.get(pe, k)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn masked_labels_do_not_move_the_loss(
        noise in prop::collection::vec(-100f64..100.0, 6),
        classification in any::<bool>(),
    ) {
        let smiles = ["CCO", "c1ccccc1", "CC(=O)O"];
        let dict = TokenDictionary::build(&smiles).unwrap();
        let task_type = if classification { TaskType::Classification } else { TaskType::Regression };
        let config = ModelConfig {
            hidden_dim: 8, depth: 2, gru_hidden: 4, gru_layers: 1, heads: 2, layers: 1, max_len: 16,
            transformer_hidden: 8, ffn_hidden: 8, ffn_layers: 2, vocab_size: dict.len(), num_tasks: 2,
            task_type, bias_enabled: true,
        };
        let model = MmsgModel::new(config.clone(), 3).unwrap();
        let mols: Vec<PreparedMolecule> = smiles.iter().map(|s| PreparedMolecule::new(s, &dict).unwrap()).collect();
        let refs: Vec<&PreparedMolecule> = mols.iter().collect();
        let batch = MolBatch::new(&refs, &config).unwrap();
        let mask = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let base = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let mut perturbed = base.clone();
        for (k, (v, &m)) in perturbed.data_mut().iter_mut().zip(mask.data()).enumerate() {
            if m == 0.0 {
                *v = noise[k];
            }
        }
        let loss_of = |labels: &Tensor| {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch).unwrap();
            let l = model.loss(&mut tape, out.outputs, labels, &mask).unwrap();
            tape.value(l).item()
        };
        prop_assert_eq!(loss_of(&base).to_bits(), loss_of(&perturbed).to_bits());
    }
}
