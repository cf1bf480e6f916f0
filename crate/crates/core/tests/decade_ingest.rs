//! A full 2008–2017 hourly record for 14 stations survives a write/parse/
//! assemble cycle intact and imputes to a complete matrix.

use aqnmf_core::ingest::{assemble, impute, parse_records, write_records, ImputePolicy, DEFAULT_MAX_GAP_HOURS};
use aqnmf_core::synth::{gen_dataset, Scenario};
use chrono::NaiveDate;

const DECADE_HOURS: usize = 87_672;

#[test]
fn decade_of_hourly_data_round_trips() {
    let mut s = Scenario::new(DECADE_HOURS, 14, 3, 5);
    s.start = NaiveDate::from_ymd_opt(2008, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    s.noise_level = 0.1;
    s.missing_rate = 0.02;
    let ds = gen_dataset(&s).unwrap();
    assert_eq!(
        ds.data.timestamps().last().unwrap().to_string(),
        "2017-12-31 23:00:00"
    );

    let mut buf = Vec::new();
    write_records(&ds.data, &ds.winds, &mut buf).unwrap();
    let parsed = parse_records(buf.as_slice()).unwrap();
    assert!(parsed.malformed.is_empty());
    let (dm, winds) = assemble(&parsed.rows, s.pollutant).unwrap();

    assert_eq!(dm.values().shape(), (DECADE_HOURS, 14));
    assert_eq!(dm.mask(), ds.data.mask());
    let same_bits = dm
        .values()
        .as_slice()
        .iter()
        .zip(ds.data.values().as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same_bits);
    assert_eq!(winds.len(), ds.winds.len());

    let filled = impute(&dm, ImputePolicy::InterpolateThenMean, DEFAULT_MAX_GAP_HOURS).unwrap();
    assert!(filled.is_complete());
}
