use std::collections::BTreeSet;

use dcnas::data::{
    make_synthetic_dataset, reduce_dataset, Dataset, ReducedSpec, Split, SyntheticSpec,
};
use dcnas::nn::{LayerKind, Tensor};
use dcnas::search_space::{ArchCode, BlockOp, SearchSpace};
use dcnas::trainer::{probe_outputs, run_epochs, train_early, train_full, Probe, TrainSettings};
use dcnas::Error;
use proptest::prelude::*;

const RATIOS6: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

fn desk() -> SearchSpace {
    SearchSpace::toy(3, &[0.5, 1.0, 2.0], 8, [3, 8, 8], 4).unwrap()
}

fn ops4() -> Vec<BlockOp> {
    ["skip", "k3e1", "k3e3", "k5e1"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
}

#[test]
fn space_sizes() {
    assert_eq!(
        SearchSpace::toy(6, &RATIOS6, 8, [3, 8, 8], 4)
            .unwrap()
            .size(),
        Some(15625)
    );
    assert_eq!(
        SearchSpace::toy(1, &[1.0], 8, [3, 8, 8], 4).unwrap().size(),
        Some(1)
    );
    assert_eq!(desk().size(), Some(27));
    assert_eq!(
        SearchSpace::layerwise(3, &ops4(), 8, [3, 8, 8], 4)
            .unwrap()
            .size(),
        Some(64)
    );
    let ops9: Vec<BlockOp> = [
        "skip", "k3e1", "k3e3", "k3e6", "k5e1", "k5e3", "k5e6", "k7e1", "k7e3",
    ]
    .iter()
    .map(|s| s.parse().unwrap())
    .collect();
    let big = SearchSpace::layerwise(22, &ops9, 16, [3, 32, 32], 100).unwrap();
    assert_eq!(big.size(), Some(9u128.pow(22)));
    assert!(big.enumerate(10_000).is_err());
}

#[test]
fn table_codes_round_trip() {
    let space = SearchSpace::toy(6, &RATIOS6, 16, [3, 32, 32], 100).unwrap();
    let best = space.parse_arch("2,4,4,2,4,1").unwrap();
    assert_eq!(best, ArchCode(vec![3, 4, 4, 3, 4, 2]));
    assert_eq!(
        space.parse_arch("1,1,1,1,1,1").unwrap(),
        ArchCode(vec![2; 6])
    );
    assert_eq!(
        space.format_arch(&space.parse_arch("4,2,1,2,0.25,2").unwrap()),
        "4,2,1,2,0.25,2"
    );
    assert_eq!(
        space.format_arch(&space.parse_arch("1/4, 1/2,1,2,4,1").unwrap()),
        "0.25,0.5,1,2,4,1"
    );
}

#[test]
fn parse_errors_carry_position() {
    let space = desk();
    let unknown = space.parse_arch("1,3,1").unwrap_err();
    assert!(unknown.to_string().contains("token 1"), "{unknown}");
    let arity = space.parse_arch("1,1").unwrap_err();
    assert!(matches!(arity, Error::Parse { .. }), "{arity:?}");
}

#[test]
fn enumeration_is_a_bijection() {
    for space in [
        desk(),
        SearchSpace::layerwise(3, &ops4(), 8, [3, 8, 8], 4).unwrap(),
    ] {
        let p = space.size().unwrap();
        let codes = space.enumerate(p).unwrap();
        let distinct: BTreeSet<_> = codes.iter().cloned().collect();
        assert_eq!(distinct.len() as u128, p);
        for (i, code) in codes.iter().enumerate() {
            assert_eq!(space.index_of(code).unwrap(), i as u128);
            assert_eq!(&space.code_at(i as u128).unwrap(), code);
        }
        assert!(space.code_at(p).is_err());
    }
}

/// Counts parameters and multiply-accumulates from the template directly:
/// 3x3 conv-relu blocks, a 2x2 pool after the first block, then global
/// pooling and a dense head.
fn brute_force_cost(widths: &[usize], input: [usize; 3], classes: usize) -> (usize, usize) {
    let [mut c, mut h, mut w] = input;
    let (mut params, mut macs) = (0, 0);
    for (l, &width) in widths.iter().enumerate() {
        params += c * width * 9 + width;
        macs += width * h * w * c * 9;
        c = width;
        if l == 0 {
            h /= 2;
            w /= 2;
        }
    }
    params += c * classes + classes;
    macs += c * classes;
    (params, macs)
}

#[test]
fn costs_match_brute_force_counting() {
    for depth in 1..=3 {
        for ratios in [vec![0.5, 1.0, 2.0], vec![0.25, 1.0, 3.0]] {
            let space = SearchSpace::toy(depth, &ratios, 8, [3, 8, 8], 4).unwrap();
            for code in space.enumerate(1000).unwrap() {
                let widths: Vec<usize> = code
                    .0
                    .iter()
                    .map(|&i| (8.0 * ratios[i] + 0.5).floor() as usize)
                    .collect();
                let net = space.build_network(&code).unwrap();
                assert_eq!(
                    (net.param_count(), net.flops()),
                    brute_force_cost(&widths, [3, 8, 8], 4),
                    "{}",
                    space.format_arch(&code)
                );
            }
        }
    }
}

#[test]
fn doubling_ratios_increases_params() {
    let small = SearchSpace::toy(3, &[0.5, 1.0], 8, [3, 8, 8], 4).unwrap();
    let large = SearchSpace::toy(3, &[1.0, 2.0], 8, [3, 8, 8], 4).unwrap();
    for code in small.enumerate(100).unwrap() {
        let a = small.build_network(&code).unwrap().param_count();
        let b = large.build_network(&code).unwrap().param_count();
        assert!(b > a);
    }
}

#[test]
fn width_rounding_to_zero_is_rejected() {
    let err = SearchSpace::toy(2, &[0.25, 1.0], 1, [3, 8, 8], 4).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("0.25"), "{err}");
    // 0.5 rounds half up to 1
    let half = SearchSpace::toy(1, &[0.5], 1, [3, 8, 8], 4).unwrap();
    assert_eq!(half.widths(&ArchCode(vec![0])).unwrap(), vec![1]);
}

#[test]
fn all_skip_is_stem_plus_head() {
    let space = SearchSpace::layerwise(3, &ops4(), 8, [3, 8, 8], 4).unwrap();
    let net = space.build_network(&ArchCode(vec![0, 0, 0])).unwrap();
    let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind).collect();
    let stem_head = [
        LayerKind::Conv2d,
        LayerKind::Relu,
        LayerKind::AvgPool2x2,
        LayerKind::Identity,
        LayerKind::Identity,
        LayerKind::Identity,
        LayerKind::GlobalAvgPool,
        LayerKind::Dense,
    ];
    assert_eq!(kinds, stem_head);
    assert_eq!(net.param_count(), 3 * 8 * 9 + 8 + 8 * 4 + 4);
}

#[test]
fn instantiation_shapes_depend_only_on_code() {
    let space = desk();
    let code = space.parse_arch("2,0.5,1").unwrap();
    let a = space.instantiate(&code, 1).unwrap();
    let b = space.instantiate(&code, 2).unwrap();
    assert_eq!(a.layers(), b.layers());
    assert_eq!(a.node_shapes(), b.node_shapes());
    assert_ne!(a.params(), b.params());
}

#[test]
fn uniform_sampling() {
    let space = desk();
    let a = space.sample_uniform(10, 3).unwrap();
    assert_eq!(a, space.sample_uniform(10, 3).unwrap());
    assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 10);
    assert_eq!(space.sample_uniform(27, 0).unwrap().len(), 27);
    assert!(matches!(
        space.sample_uniform(28, 0),
        Err(Error::Argument(_))
    ));
}

fn nearest_centroid_accuracy(d: &Dataset) -> f64 {
    let train = d.train.inputs.as_ref().unwrap();
    let row = train.row_len();
    let mut means = vec![vec![0.0f64; row]; d.num_classes];
    let counts = d.train.class_counts(d.num_classes);
    for (i, &y) in d.train.labels.iter().enumerate() {
        for (m, &v) in means[y].iter_mut().zip(train.row(i)) {
            *m += v as f64 / counts[y] as f64;
        }
    }
    let test = d.test.inputs.as_ref().unwrap();
    let hits = d
        .test
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let x = test.row(i);
            let dist = |m: &Vec<f64>| {
                m.iter()
                    .zip(x)
                    .map(|(a, &b)| (a - b as f64).powi(2))
                    .sum::<f64>()
            };
            (0..d.num_classes).min_by(|&a, &b| dist(&means[a]).total_cmp(&dist(&means[b])))
                == Some(y)
        })
        .count();
    hits as f64 / d.test.len() as f64
}

#[test]
fn synthetic_dataset_properties() {
    let spec = SyntheticSpec {
        classes: 3,
        per_class: 100,
        ..Default::default()
    };
    let d = make_synthetic_dataset(&spec, 5).unwrap();
    assert_eq!((d.train.len(), d.val.len(), d.test.len()), (210, 45, 45));
    assert_eq!(d, make_synthetic_dataset(&spec, 5).unwrap());
    assert_ne!(d.train, make_synthetic_dataset(&spec, 6).unwrap().train);
    assert!(make_synthetic_dataset(
        &SyntheticSpec {
            classes: 1,
            ..spec.clone()
        },
        0
    )
    .is_err());

    let separated = SyntheticSpec {
        separation: 3.0,
        max_shift: 0,
        ..spec.clone()
    };
    assert!(nearest_centroid_accuracy(&make_synthetic_dataset(&separated, 1).unwrap()) > 0.95);

    let identical = SyntheticSpec {
        classes: 2,
        per_class: 400,
        separation: 0.0,
        ..spec
    };
    let acc = nearest_centroid_accuracy(&make_synthetic_dataset(&identical, 1).unwrap());
    assert!((acc - 0.5).abs() < 0.12, "{acc}");
}

fn thousand_examples() -> Dataset {
    let spec = SyntheticSpec {
        classes: 4,
        per_class: 358,
        shape: [1, 2, 2],
        ..Default::default()
    };
    let d = make_synthetic_dataset(&spec, 0).unwrap();
    let rows: Vec<usize> = (0..1000).collect();
    Dataset {
        train: d.train.select(&rows),
        ..d
    }
}

#[test]
fn reduction_counts() {
    let d = thousand_examples();
    let full = reduce_dataset(
        &d,
        &ReducedSpec {
            sigma: 1.0,
            seed: 0,
            stratified: true,
        },
    )
    .unwrap();
    assert_eq!(full.train.len(), 1000);
    let mut a = full.train.labels.clone();
    let mut b = d.train.labels.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);

    let spec = ReducedSpec {
        sigma: 0.1,
        seed: 1,
        stratified: true,
    };
    let r = reduce_dataset(&d, &spec).unwrap();
    assert_eq!(r.train.len(), 100);
    assert_eq!((&r.val, &r.test), (&d.val, &d.test));
    let before = d.train.class_counts(4);
    for (c, &n) in r.train.class_counts(4).iter().enumerate() {
        let expect = before[c] as f64 * 0.1;
        assert!(
            (n as f64 - expect).abs() <= 1.0,
            "class {c}: {n} vs {expect}"
        );
    }
    let other = reduce_dataset(&d, &ReducedSpec { seed: 2, ..spec }).unwrap();
    assert_eq!(other.train.len(), 100);
    assert_ne!(other.train, r.train);
    assert!(reduce_dataset(&d, &ReducedSpec { sigma: 0.0, ..spec }).is_err());
}

#[test]
fn reduction_that_empties_a_class_fails() {
    let d = thousand_examples();
    let err = reduce_dataset(
        &d,
        &ReducedSpec {
            sigma: 0.001,
            seed: 0,
            stratified: true,
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("class"), "{err}");
}

fn tiny() -> (SearchSpace, Dataset) {
    let space = SearchSpace::toy(2, &[0.5, 1.0], 4, [3, 8, 8], 3).unwrap();
    let spec = SyntheticSpec {
        classes: 3,
        per_class: 40,
        ..Default::default()
    };
    (space, make_synthetic_dataset(&spec, 4).unwrap())
}

#[test]
fn single_class_dataset_is_always_right() {
    let space = SearchSpace::toy(1, &[1.0], 4, [1, 4, 4], 1).unwrap();
    let split = |n: usize| {
        Split::new(
            Tensor::new(vec![n, 1, 4, 4], vec![0.5; n * 16]).unwrap(),
            vec![0; n],
        )
        .unwrap()
    };
    let d = Dataset::new(1, [1, 4, 4], split(8), split(2), split(3)).unwrap();
    let (y, _) = train_full(
        &space,
        &ArchCode(vec![0]),
        &d,
        2,
        0,
        &TrainSettings::default(),
    )
    .unwrap();
    assert_eq!(y, 1.0);
    assert!(train_full(
        &space,
        &ArchCode(vec![0]),
        &d,
        0,
        0,
        &TrainSettings::default()
    )
    .is_err());
}

#[test]
fn full_training_is_reproducible() {
    let (space, d) = tiny();
    let code = space.parse_arch("1,1").unwrap();
    let settings = TrainSettings::default();
    let (a, _) = train_full(&space, &code, &d, 3, 7, &settings).unwrap();
    let (b, _) = train_full(&space, &code, &d, 3, 7, &settings).unwrap();
    assert_eq!(a, b);
}

#[test]
fn early_training_logs() {
    let (space, d) = tiny();
    let code = space.parse_arch("0.5,1").unwrap();
    let probe = Probe::sample(&d, 16, 0).unwrap();
    let settings = TrainSettings::default();
    let (e, log) = train_early(&space, &code, &d, 1, 3, &probe, &settings, true).unwrap();
    assert_eq!(log.eta(), 1);
    assert_eq!(log.epochs[0].probe_outputs.len(), 2);
    assert_eq!(log.epochs[0].param_snapshots.as_ref().unwrap().len(), 2);
    assert!((0.0..=1.0).contains(&e));

    let (_, a) = train_early(&space, &code, &d, 3, 3, &probe, &settings, false).unwrap();
    let (_, b) = train_early(&space, &code, &d, 3, 3, &probe, &settings, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.truncated(1).epochs,
        train_early(&space, &code, &d, 1, 3, &probe, &settings, false)
            .unwrap()
            .1
            .epochs
    );

    let big = Probe::sample(&d, d.train.len(), 0).unwrap();
    let small = Dataset {
        train: d.train.select(&[0, 1, 2]),
        ..d.clone()
    };
    assert!(train_early(&space, &code, &small, 1, 0, &big, &settings, false).is_err());
    assert!(train_early(&space, &code, &d, 0, 0, &probe, &settings, false).is_err());
}

#[test]
fn early_training_on_everything_matches_full_training() {
    let (space, d) = tiny();
    let code = space.parse_arch("1,0.5").unwrap();
    let settings = TrainSettings::default();
    let probe = Probe::sample(&d, 8, 0).unwrap();
    let as_test = d.with_val_as_test();
    let (e, _) = train_early(&space, &code, &as_test, 4, 11, &probe, &settings, false).unwrap();
    let (y, _) = train_full(&space, &code, &d, 4, 11, &settings).unwrap();
    assert_eq!(e, y);
}

#[test]
fn first_epoch_probe_vectors_match_a_fresh_forward_pass() {
    let (space, d) = tiny();
    let code = space.parse_arch("1,1").unwrap();
    let settings = TrainSettings::default();
    let probe = Probe::sample(&d, 12, 2).unwrap();
    let (_, log) = train_early(&space, &code, &d, 2, 5, &probe, &settings, false).unwrap();

    let mut net = space.instantiate(&code, 5).unwrap();
    run_epochs(&mut net, &d.train, 1, 5, &settings, |_, _| Ok(())).unwrap();
    let nodes = net.forward_nodes(&probe.inputs).unwrap();
    for (b, &tap) in net.block_output_nodes().iter().enumerate() {
        let t = &nodes[tap];
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let area = t.len() / (n * c);
        let mut expect = vec![0.0f64; c];
        for i in 0..n {
            for (ch, e) in expect.iter_mut().enumerate() {
                let plane = &t.data()[(i * c + ch) * area..(i * c + ch + 1) * area];
                *e += plane.iter().map(|&v| v as f64).sum::<f64>() / area as f64 / n as f64;
            }
        }
        for (got, want) in log.epochs[0].probe_outputs[b].iter().zip(&expect) {
            assert!(
                (*got as f64 - want).abs() < 1e-5,
                "block {b}: {got} vs {want}"
            );
        }
    }
    assert_eq!(
        probe_outputs(&net, &probe).unwrap(),
        log.epochs[0].probe_outputs
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn format_parse_round_trip(choices in prop::collection::vec(0usize..5, 6)) {
        let space = SearchSpace::toy(6, &RATIOS6, 8, [3, 8, 8], 4).unwrap();
        let code = ArchCode(choices);
        prop_assert_eq!(space.parse_arch(&space.format_arch(&code)).unwrap(), code);
    }
}
