//! Classification of the published result tables.

use asr_probe::experiment::{classify, emit, Format, Report, ResultsTable, Setting};
use asr_probe::stimulus::Pattern::{self, AAB, ABA, ABB};

fn table(setting: Setting, model: &str, rows: &[&[f64]]) -> ResultsTable {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    ResultsTable::from_means(setting, model, &rows).unwrap()
}

fn minima(t: &ResultsTable) -> Vec<Option<Pattern>> {
    classify(t).rows.iter().map(|r| r.argmin).collect()
}

#[test]
fn seen_primes_random_probes() {
    let bert = table(
        Setting::SeenRandom,
        "BERT",
        &[
            &[56.98, 57.42, 55.89, 59.00],
            &[56.56, 56.87, 55.94, 58.43],
            &[62.02, 62.20, 60.86, 63.92],
        ],
    );
    assert_eq!(minima(&bert), vec![Some(ABB); 3]);
    let xlnet = table(
        Setting::SeenRandom,
        "XLNet",
        &[
            &[39.34, 40.89, 39.08, 42.55],
            &[41.28, 43.73, 41.87, 45.58],
            &[40.44, 41.81, 40.22, 42.70],
        ],
    );
    assert_eq!(minima(&xlnet), vec![Some(ABB), Some(AAB), Some(ABB)]);
    let v = classify(&xlnet);
    assert!(!v.human_consistent);
    assert!(v.rows.iter().all(|r| r.abc_is_max == Some(true)));
}

#[test]
fn seen_primes_seen_probes() {
    let xlnet = table(
        Setting::SeenSeen,
        "XLNet",
        &[
            &[32.6, 36.89, 37.04],
            &[32.13, 33.73, 33.76],
            &[35.13, 32.86, 34.78],
        ],
    );
    assert_eq!(minima(&xlnet), vec![Some(AAB), Some(AAB), Some(ABA)]);
    let gpt2 = table(
        Setting::SeenSeen,
        "GPT-2",
        &[
            &[42.70, 44.59, 44.87],
            &[43.45, 45.03, 45.37],
            &[42.05, 43.70, 43.94],
        ],
    );
    assert_eq!(minima(&gpt2), vec![Some(AAB); 3]);
    assert!(!classify(&gpt2).human_consistent);
}

#[test]
fn seen_probe_xlnet_near_ties_resolve_strictly() {
    // 33.44 appears twice in the ABB row; the argmin is still unique
    let xlnet = table(
        Setting::RandomSeen,
        "XLNet",
        &[
            &[33.48, 34.89, 33.46],
            &[33.33, 34.80, 33.44],
            &[33.52, 34.83, 33.44],
        ],
    );
    assert_eq!(minima(&xlnet), vec![Some(ABB), Some(AAB), Some(ABB)]);
}

#[test]
fn exact_tie_has_no_argmin() {
    let t = table(
        Setting::RandomSeen,
        "tied",
        &[&[1.0, 1.0, 2.0], &[2.0, 1.0, 3.0], &[3.0, 2.0, 1.0]],
    );
    let v = classify(&t);
    assert_eq!(v.rows[0].argmin, None);
    assert!(!v.human_consistent);
    assert!(emit(&t, &v, Format::Text).contains("AAB primes -> tie"));
}

#[test]
fn report_json_round_trips() {
    let t = table(
        Setting::RandomRandom,
        "GPT-2",
        &[
            &[57.65, 57.62, 57.53, 57.71],
            &[57.72, 57.69, 57.60, 57.77],
            &[57.66, 57.63, 57.54, 57.72],
        ],
    );
    let report = Report::new(t);
    let back = Report::from_json(&report.to_json()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json(), report.to_json());
}
