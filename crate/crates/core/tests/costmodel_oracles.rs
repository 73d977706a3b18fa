mod common;

use proptest::prelude::*;
use rand::Rng;

use wpool::costmodel::{
    compression_ratio, inventory_report, lut_storage, model_compression_report, speedup_curve, BenchLayer,
    ReportConfig,
};
use wpool::engine::{EngineConfig, MemoryModel};
use wpool::fixtures::{build_fixture, FixtureKind};
use wpool::model::LayerSpec;
use wpool::pooler::{compress_model, Exclusions, PoolConfig};

fn big_ratio(w: u128, bw: u128, n: u32, s: u128, bl: u128, ib: u128) -> (u128, u128) {
    let lut = (1u128 << n) * s * bl;
    let idx = w.div_ceil(n as u128) * ib;
    (w * bw, idx + lut)
}

#[test]
fn formulas_match_wide_integer_oracle() {
    let mut rng = common::rng(1);
    for _ in 0..1000 {
        let w = rng.gen_range(1u64..1 << 40);
        let bw = rng.gen_range(1u32..=16);
        let n = rng.gen_range(1u32..=16);
        let s = rng.gen_range(1u64..=1 << 16);
        let bl = [4u32, 8, 16, 32][rng.gen_range(0..4)];
        let ib = rng.gen_range(1u32..=16);
        let storage = lut_storage(n, s, bl).unwrap();
        assert_eq!(storage as u128, (1u128 << n) * s as u128 * bl as u128);
        let (num, den) = big_ratio(w as u128, bw as u128, n, s as u128, bl as u128, ib as u128);
        let cr = compression_ratio(w, bw, n, s, bl, ib).unwrap();
        let want = num as f64 / den as f64;
        assert!((cr - want).abs() <= want * 1e-12, "{cr} vs {want}");
    }
}

#[test]
fn storage_and_ratio_examples() {
    assert_eq!(lut_storage(8, 64, 8).unwrap(), 131_072);
    assert_eq!(lut_storage(1, 1, 1).unwrap(), 2);
    assert_eq!(lut_storage(4, 2, 32).unwrap(), 1024);
    let byte = compression_ratio(2_729_664, 8, 8, 64, 8, 8).unwrap();
    let packed = compression_ratio(2_729_664, 8, 8, 64, 8, 6).unwrap();
    assert!((byte - 7.63).abs() < 0.01 && (byte / 7.55 - 1.0).abs() < 0.015);
    assert!((packed - 10.0).abs() < 0.05 && packed > byte);
    assert!(8.0 - compression_ratio(1 << 50, 8, 8, 64, 8, 8).unwrap() < 1e-6);
}

#[test]
fn resnet_inventories_track_table_values() {
    let cfg = ReportConfig::default();
    let r10 = inventory_report(&FixtureKind::ResNet10.specs(), &Exclusions::default(), 8, 64, &cfg).unwrap();
    let r14 = inventory_report(&FixtureKind::ResNet14.specs(), &Exclusions::default(), 8, 64, &cfg).unwrap();
    assert_eq!(r10.params, 665_280);
    assert_eq!(r14.params, 2_729_664);
    assert!((r10.compression_ratio / 6.51 - 1.0).abs() <= 0.15);
    assert!((r14.compression_ratio / 7.55 - 1.0).abs() <= 0.10);
}

#[test]
fn small_network_pays_for_its_table() {
    let g = build_fixture(FixtureKind::TinyConv, 2).unwrap();
    let cfg = PoolConfig {
        max_iter: 20,
        ..PoolConfig::default()
    };
    let (c, _) = compress_model(&g, &cfg).unwrap();
    let r = model_compression_report(&c, &ReportConfig::default()).unwrap();
    assert!((78_000..86_000).contains(&r.params));
    assert!((10.0..100.0).contains(&r.lut_overhead_pct), "{}", r.lut_overhead_pct);
    let from_specs = inventory_report(&FixtureKind::TinyConv.specs(), &Exclusions::default(), 8, 64, &ReportConfig::default()).unwrap();
    assert_eq!(from_specs.storage_total_bits, r.storage_total_bits);
}

#[test]
fn everything_excluded_model() {
    let g = build_fixture(FixtureKind::Classifier, 3).unwrap();
    let cfg = PoolConfig {
        exclusions: Exclusions {
            layers: (0..5).collect(),
            ..Exclusions::default()
        },
        ..PoolConfig::default()
    };
    let (c, _) = compress_model(&g, &cfg).unwrap();
    let r = model_compression_report(&c, &ReportConfig::default()).unwrap();
    assert_eq!(r.compression_ratio, 1.0);
}

#[test]
fn doubling_filters_helps_compression() {
    let base = [
        LayerSpec::conv(3, 32, 3, 1, 1),
        LayerSpec::conv(32, 32, 3, 1, 1),
        LayerSpec::conv(32, 32, 3, 1, 1),
    ];
    let doubled = [
        LayerSpec::conv(3, 64, 3, 1, 1),
        LayerSpec::conv(64, 64, 3, 1, 1),
        LayerSpec::conv(64, 64, 3, 1, 1),
    ];
    let cfg = ReportConfig::default();
    let a = inventory_report(&base, &Exclusions::default(), 8, 64, &cfg).unwrap();
    let b = inventory_report(&doubled, &Exclusions::default(), 8, 64, &cfg).unwrap();
    assert!(b.compression_ratio > a.compression_ratio);
    assert!(b.lut_overhead_pct < a.lut_overhead_pct);
}

#[test]
fn precompute_curve_flattens_at_low_bits() {
    let layer = BenchLayer {
        size: 8,
        ..BenchLayer::default()
    };
    let bits: Vec<u32> = (1..=8).rev().collect();
    let c = speedup_curve(&layer, &EngineConfig::default(), &MemoryModel::mc_large(), &bits).unwrap();
    let at = |series, m| c.find(series, 128, m).unwrap().speedup;
    assert_eq!(at("precompute-off", 8), 1.0);
    assert_eq!(at("precompute-on", 8), 1.0);
    assert!(at("precompute-on", 1) < at("precompute-off", 1));
}

proptest! {
    #[test]
    fn ratio_grows_with_parameter_count(w in 1u64..1 << 36, extra in 1u64..1 << 20, s in 1u64..=256) {
        let a = compression_ratio(w, 8, 8, s, 8, 8).unwrap();
        let b = compression_ratio(w + 8 * extra, 8, 8, s, 8, 8).unwrap();
        prop_assert!(b > a);
        let lut = lut_storage(8, s, 8).unwrap() as f64;
        let share = |w: u64| lut / (lut + w.div_ceil(8) as f64 * 8.0);
        prop_assert!(share(w + 8 * extra) < share(w));
    }
}
