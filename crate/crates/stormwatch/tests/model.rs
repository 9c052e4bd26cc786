use stormwatch::core::forecast::{fit, HolidayCalendar, HyperParams};
use stormwatch::core::span::add_days;
use stormwatch::core::tune::{random_search, SearchConfig, SearchSpace};
use stormwatch::core::{NaiveDate, SignalKind};
use stormwatch::model::ModelDocument;
use stormwatch::synth::{storm_world, WorldSpec};
use stormwatch::trials::{log_lines, read_log, write_log, TrialTimer};

fn world() -> stormwatch::synth::StormWorld {
    storm_world(&WorldSpec { days: 700, n_storms: 4, n_decoys: 2, seed: 21, ..WorldSpec::default() })
}

#[test]
fn model_document_round_trips_every_field() {
    let w = world();
    let mut holidays = HolidayCalendar::default();
    holidays.add(NaiveDate::from_ymd_opt(1996, 12, 25).unwrap(), "christmas").unwrap();
    holidays.add(NaiveDate::from_ymd_opt(1997, 12, 25).unwrap(), "christmas").unwrap();
    let model = fit(w.bundle.get(SignalKind::Entities), &HyperParams::default(), &holidays).unwrap();
    let doc = ModelDocument::new(Some(SignalKind::Entities), model.clone());
    let text = doc.to_json().unwrap();
    let back = ModelDocument::from_json(&text).unwrap();
    assert_eq!(back, doc);

    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    let m = &back.model;
    assert!(close(&[m.k, m.m, m.sigma_resid], &[model.k, model.m, model.sigma_resid]));
    assert!(close(&m.delta, &model.delta));
    assert!(close(&m.beta, &model.beta));
    assert!(close(&m.kappa, &model.kappa));
    let span = model.train_span;
    let (a, b) = (m.predict_with_interval(span), model.predict_with_interval(span));
    for (p, q) in a.points.iter().zip(&b.points) {
        assert!((p.yhat - q.yhat).abs() <= 1e-12 && (p.lower - q.lower).abs() <= 1e-12);
    }
    let later = add_days(span.end, 30);
    assert!((m.predict_point(later) - model.predict_point(later)).abs() <= 1e-12);
}

#[test]
fn foreign_or_future_documents_are_refused() {
    let w = world();
    let model = fit(w.bundle.get(SignalKind::Plot), &HyperParams::default(), &HolidayCalendar::default()).unwrap();
    let text = ModelDocument::new(None, model).to_json().unwrap();
    let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert!(ModelDocument::from_json(&future).unwrap_err().to_string().contains("schema version 2"));
    let foreign = text.replacen("stormwatch-model", "other", 1);
    assert!(ModelDocument::from_json(&foreign).is_err());
}

#[test]
fn trial_log_reads_back_what_was_written() {
    let w = world();
    let seeds: Vec<_> = w.storms.iter().map(|d| d.to_seed()).collect();
    let cfg = SearchConfig {
        space: SearchSpace { n_trials: 3, rng_seed: 4, ..SearchSpace::default() },
        ..SearchConfig::default()
    };
    let report = random_search(&w.bundle, &seeds, &cfg, &HolidayCalendar::default()).unwrap();
    let timer = TrialTimer::new(3);
    for i in 0..3 {
        timer.start(i);
        timer.stop(i);
    }
    let times = timer.wall_times().unwrap();
    for timed in [None, Some(times.as_slice())] {
        let lines = log_lines(&report, timed);
        let mut buf = Vec::new();
        write_log(&mut buf, &lines).unwrap();
        let back = read_log(&buf[..], "log").unwrap();
        assert_eq!(back, lines);
        assert_eq!(String::from_utf8(buf).unwrap().contains("wall_time_ms"), timed.is_some());
    }
    let first = &log_lines(&report, None)[0];
    let score = report.log[0].outcome.as_ref().unwrap();
    assert_eq!(first.a, Some(score.n_candidates));
    assert_eq!(first.d, Some(score.matched));
    assert_eq!(first.s, Some(seeds.len()));
}

#[test]
fn timer_reports_nothing_until_every_trial_stops() {
    let t = TrialTimer::new(2);
    t.start(0);
    t.stop(0);
    assert!(t.wall_times().is_none());
    t.start(1);
    t.stop(1);
    assert_eq!(t.wall_times().unwrap().len(), 2);
}
