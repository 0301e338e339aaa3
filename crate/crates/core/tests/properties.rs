use proptest::prelude::*;

use graphfid::mapping::{energy, fidelity_from_histogram, local_energy_delta, spin_histogram, term_counts};
use graphfid::montecarlo::{decode_samples, encode_samples};
use graphfid::pauli::{enumerate_weights, fidelity_exact, stabilizer_from_bits, weight_of};
use graphfid::sweep::{format_sig12, read_csv, write_csv_to, Method, SweepRow};
use graphfid::{build_2d_regular, build_3d_stack, coupling_from_noise, Graph, NoiseModel, SpinConfig};

/// Random simple graph on 1..=9 vertices.
fn graph() -> impl Strategy<Value = Graph> {
    (1usize..=9)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * (n - 1) / 2)))
        .prop_map(|(n, keep)| {
            let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            let edges: Vec<_> = pairs.zip(keep).filter(|(_, k)| *k).map(|(e, _)| e).collect();
            Graph::from_edges(n, edges, "random").unwrap()
        })
}

fn graph_and_bits() -> impl Strategy<Value = (Graph, Vec<bool>)> {
    graph().prop_flat_map(|g| {
        let n = g.n();
        (Just(g), proptest::collection::vec(any::<bool>(), n))
    })
}

fn noise() -> impl Strategy<Value = NoiseModel> {
    (0.001f64..0.3, 0.001f64..0.3, 0.001f64..0.3).prop_map(|(x, y, z)| NoiseModel::new(x, y, z).unwrap())
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3f64..1e3,
        -1e-8f64..1e-8,
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

fn row() -> impl Strategy<Value = SweepRow> {
    (
        (finite(), finite(), finite(), finite()),
        (proptest::option::of(finite()), proptest::option::of(finite())),
        (finite(), finite(), finite()),
        (0usize..6, "[a-z0-9:=x-]{1,20}", proptest::option::of(any::<u64>())),
    )
        .prop_map(|((p, beta, f, lf), (e, c), (ef, ee, ec), (m, desc, seed))| SweepRow {
            p,
            beta,
            fidelity_per_qubit: f,
            log_fidelity: lf,
            energy_per_qubit: e,
            specific_heat_per_qubit: c,
            err_fidelity: ef,
            err_energy: ee,
            err_specific_heat: ec,
            method: Method::ALL[m],
            graph_descriptor: desc,
            seed,
        })
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-12 * a.abs().max(b.abs())
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbor_lists_are_symmetric(g in graph()) {
        for i in 0..g.n() {
            for &j in g.neighbors(i) {
                prop_assert!(j != i);
                prop_assert!(g.neighbors(j).contains(&i));
            }
        }
        let degrees: usize = (0..g.n()).map(|i| g.degree(i)).sum();
        prop_assert_eq!(degrees, 2 * g.edges().len());
    }

    #[test]
    fn lattice_builders_are_regular(d in 3usize..=8, hx in 2usize..6, ny in 3usize..7, nz in 3usize..5) {
        let nx = 2 * hx;
        let g = build_2d_regular(d, nx, ny).unwrap();
        prop_assert!((0..g.n()).all(|i| g.degree(i) == d));
        prop_assert_eq!(g.edges().len(), g.n() * d / 2);
        if d <= 6 {
            let s = build_3d_stack(d, nx, ny, nz).unwrap();
            prop_assert!((0..s.n()).all(|i| s.degree(i) == d + 2));
        }
    }

    #[test]
    fn histogram_counts_every_stabilizer_once(g in graph()) {
        let h = enumerate_weights(&g).unwrap();
        prop_assert_eq!(h.total(), 1u64 << g.n());
        prop_assert!(h.iter().all(|(w, _)| w.total() <= g.n()));
        prop_assert_eq!(h, spin_histogram(&g).unwrap());
    }

    #[test]
    fn spin_configuration_matches_its_stabilizer((g, bits) in graph_and_bits()) {
        let from_spins = term_counts(&g, &SpinConfig::from_bits(&bits)).unwrap().weight();
        let from_paulis = weight_of(&stabilizer_from_bits(&g, &bits).unwrap());
        prop_assert_eq!(from_spins, from_paulis);
        prop_assert_eq!(SpinConfig::from_bits(&bits).to_bits(), bits);
    }

    #[test]
    fn local_delta_matches_recompute((g, bits) in graph_and_bits(), site in any::<prop::sample::Index>(), nm in noise()) {
        let cp = coupling_from_noise(&nm, g.n()).unwrap();
        let cfg = SpinConfig::from_bits(&bits);
        let i = site.index(g.n());
        let mut flipped = cfg.clone();
        flipped.flip(i);
        let direct = energy(&g, &flipped, &cp).unwrap() - energy(&g, &cfg, &cp).unwrap();
        let local = local_energy_delta(&g, &cfg, i, &cp).unwrap();
        prop_assert!((direct - local).abs() <= 1e-9 * direct.abs().max(1.0));
    }

    #[test]
    fn partition_function_is_the_fidelity(g in graph(), nm in noise()) {
        let exact = fidelity_exact(&g, &nm).unwrap();
        let spin = fidelity_from_histogram(&spin_histogram(&g).unwrap(), &nm).unwrap();
        prop_assert!((exact - spin).abs() <= 1e-12 * exact);
        prop_assert!(exact >= (1.0 - nm.p()).powi(g.n() as i32) * (1.0 - 1e-12));
        prop_assert!(exact <= 1.0 + 1e-12);
    }
}

proptest! {
    #[test]
    fn sig12_parses_back(x in finite()) {
        let s = format_sig12(x);
        let y: f64 = s.parse().unwrap();
        prop_assert!(close(x, y), "{} -> {} -> {}", x, s, y);
        prop_assert_eq!(format_sig12(y), s);
    }

    #[test]
    fn csv_round_trip(rows in proptest::collection::vec(row(), 0..8)) {
        let meta = vec![("program".to_string(), "test".to_string())];
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &rows, &meta).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let table = read_csv(&text).unwrap();
        prop_assert_eq!(&table.metadata, &meta);
        prop_assert_eq!(table.rows.len(), rows.len());
        for (a, b) in rows.iter().zip(&table.rows) {
            prop_assert!(close(a.p, b.p) && close(a.beta, b.beta));
            prop_assert!(close(a.fidelity_per_qubit, b.fidelity_per_qubit));
            prop_assert!(close(a.log_fidelity, b.log_fidelity));
            prop_assert!(close_opt(a.energy_per_qubit, b.energy_per_qubit));
            prop_assert!(close_opt(a.specific_heat_per_qubit, b.specific_heat_per_qubit));
            prop_assert!(close(a.err_fidelity, b.err_fidelity));
            prop_assert!(close(a.err_energy, b.err_energy));
            prop_assert!(close(a.err_specific_heat, b.err_specific_heat));
            prop_assert_eq!(a.method, b.method);
            prop_assert_eq!(&a.graph_descriptor, &b.graph_descriptor);
            prop_assert_eq!(a.seed, b.seed);
        }
        let mut again = Vec::new();
        write_csv_to(&mut again, &table.rows, &table.metadata).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn sample_dump_round_trip(series in proptest::collection::vec(proptest::collection::vec(any::<f64>(), 0..20), 0..5)) {
        let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
        let decoded = decode_samples(&encode_samples(&refs)).unwrap();
        prop_assert_eq!(decoded.len(), series.len());
        for (a, b) in series.iter().zip(&decoded) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
