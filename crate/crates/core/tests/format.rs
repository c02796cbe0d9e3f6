use hashenc::error::FormatError;
use hashenc::format::{deserialize, read, serialize, stream_len, write, Precision, HEADER_BYTES};
use hashenc::grid::GridConfig;
use hashenc::model::{HashField, HashGrid, PixelDecoder};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(cfg: GridConfig, hidden: usize, seed: u64) -> HashField<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = (0..cfg.table_len())
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let grid = HashGrid::from_tables(cfg, tables).unwrap();
    HashField::new(
        grid,
        PixelDecoder::random(cfg.input_dim(), hidden, &mut rng),
    )
    .unwrap()
}

fn small(levels: usize, log_t: u32, k: usize) -> GridConfig {
    GridConfig {
        levels,
        table_size: 1 << log_t,
        features_per_level: 2,
        n_min: 6,
        n_max: 40,
        k,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_bit_exact(levels in 2usize..6, log_t in 4u32..9, k in 1usize..=3, hidden in 1usize..20, seed: u64) {
        let cfg = small(levels, log_t, k);
        let field = random_field(cfg, hidden, seed);
        let bytes = serialize(&field, Precision::F32);
        prop_assert_eq!(bytes.len(), stream_len(&cfg, hidden, Precision::F32));
        let back: HashField<f32> = deserialize(&bytes).unwrap();
        prop_assert_eq!(back.grid.config(), field.grid.config());
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.grid.tables()), bits(field.grid.tables()));
        prop_assert_eq!(bits(back.decoder.params()), bits(field.decoder.params()));
        prop_assert_eq!(serialize(&back, Precision::F32), bytes);
    }

    #[test]
    fn every_prefix_is_a_truncation_error(cut in 0usize..10_000, seed: u64) {
        let field = random_field(small(3, 6, 1), 8, seed);
        let bytes = serialize(&field, Precision::F32);
        let cut = cut % bytes.len();
        let err = deserialize::<f32>(&bytes[..cut]).unwrap_err();
        prop_assert!(matches!(err, FormatError::Truncated { .. }), "{:?}", err);
    }

    #[test]
    fn non_finite_payload_is_rejected(index in 0usize..1000, seed: u64) {
        let field = random_field(small(3, 6, 1), 8, seed);
        let mut bytes = serialize(&field, Precision::F32);
        let count = (bytes.len() - HEADER_BYTES) / 4;
        let at = HEADER_BYTES + 4 * (index % count);
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        prop_assert_eq!(deserialize::<f32>(&bytes).unwrap_err(), FormatError::NonFinite(index % count));
    }
}

#[test]
fn file_round_trip_and_header_errors() {
    let field = random_field(GridConfig::default(), 64, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hshf");
    write(
        &field,
        Precision::F32,
        std::fs::File::create(&path).unwrap(),
    )
    .unwrap();
    let back: HashField<f32> = read(&path).unwrap();
    assert_eq!(back, field);

    let bytes = serialize(&field, Precision::F32);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        deserialize::<f32>(&bad),
        Err(FormatError::BadMagic(_))
    ));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert_eq!(
        deserialize::<f32>(&bad).unwrap_err(),
        FormatError::UnsupportedVersion(9)
    );
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 3]);
    assert_eq!(
        deserialize::<f32>(&long).unwrap_err(),
        FormatError::TrailingBytes(3)
    );
}
