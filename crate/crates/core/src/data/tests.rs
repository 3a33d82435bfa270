use std::fs;
use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::dsp::{write_wav, AudioClip};
use crate::error::Error;
use crate::tensor::uniform_vec;

fn tone(len: usize, freq: f64, amp: f32) -> AudioClip {
    let s = (0..len)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin() as f32)
        .collect();
    AudioClip::from_samples(s).unwrap()
}

fn put(root: &Path, rel: &str, clip: &AudioClip) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    write_wav(&p, clip).unwrap();
}

/// Ten keyword folders with two files each, two filler words, background noise.
fn gsc_tree(root: &Path) {
    for (i, k) in GSC_KEYWORDS.iter().enumerate() {
        for f in ["a", "b"] {
            put(root, &format!("{k}/{f}.wav"), &tone(4000, 200.0 + 50.0 * i as f64, 0.3));
        }
    }
    for w in ["marvin", "sheila"] {
        for f in 0..6 {
            put(root, &format!("{w}/{f}.wav"), &tone(4000, 900.0, 0.2));
        }
    }
    put(root, "_background_noise_/hum.wav", &tone(40_000, 60.0, 0.5));
    fs::write(root.join("validation_list.txt"), "yes/b.wav\nmarvin/0.wav\n").unwrap();
    fs::write(root.join("testing_list.txt"), "no/b.wav\n").unwrap();
}

fn scan(root: &Path) -> Result<DatasetManifest, Error> {
    scan_gsc(
        root,
        &root.join("validation_list.txt"),
        &root.join("testing_list.txt"),
        &GSC_KEYWORDS,
    )
}

fn entry<'a>(m: &'a DatasetManifest, rel: &str) -> &'a Entry {
    m.entries.iter().find(|e| e.path.ends_with(rel)).unwrap()
}

#[test]
fn gsc_labels_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    gsc_tree(dir.path());
    let m = scan(dir.path()).unwrap();
    assert_eq!(m.num_classes(), 12);
    assert_eq!(m.labels, GSC_CLASSES);
    let yes = entry(&m, "yes/a.wav");
    assert_eq!((yes.label, yes.split), (0, Split::Train));
    assert_eq!(entry(&m, "yes/b.wav").split, Split::Val);
    assert_eq!(entry(&m, "no/b.wav").split, Split::Test);
    assert_eq!(entry(&m, "marvin/3.wav").label, 10);
    assert_eq!(entry(&m, "marvin/0.wav").split, Split::Val);
    assert_eq!(m.unknown_label, Some(10));
    assert_eq!(m.silence_label, Some(11));
    assert!(m.entries.iter().all(|e| e.label != 11 && e.label < 12));
    assert_eq!(m.background_paths.len(), 1);
    assert_eq!(m.entries.len(), 20 + 12);
    assert_eq!(m, scan(dir.path()).unwrap());
}

#[test]
fn gsc_layout_errors() {
    let dir = tempfile::tempdir().unwrap();
    gsc_tree(dir.path());
    fs::write(dir.path().join("testing_list.txt"), "no/b.wav\nyes/b.wav\n").unwrap();
    match scan(dir.path()) {
        Err(Error::SplitConflict(p)) => assert_eq!(p, "yes/b.wav"),
        other => panic!("{other:?}"),
    }
    fs::remove_dir_all(dir.path().join("stop")).unwrap();
    match scan(dir.path()) {
        Err(Error::DatasetLayout(msg)) => assert!(msg.contains("`stop`"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn folder_corpus_labels_follow_order() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = (0..15).map(|i| format!("cmd{i:02}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    for (i, n) in names.iter().enumerate() {
        for f in 0..3 {
            put(
                dir.path(),
                &format!("{n}/take{f}.wav"),
                &tone(2000, 300.0 + i as f64, 0.1),
            );
        }
    }
    let m = scan_folder_corpus(dir.path(), &refs, 17_600).unwrap();
    assert_eq!(m.num_classes(), 15);
    for e in &m.entries {
        let folder = e.path.parent().unwrap().file_name().unwrap().to_str().unwrap();
        assert_eq!(m.labels[e.label], folder);
        assert_eq!(e.split, split_for_name(e.path.file_name().unwrap().to_str().unwrap()));
    }
    assert_eq!(m, scan_folder_corpus(dir.path(), &refs, 17_600).unwrap());
    assert!(m.warnings.is_empty());

    // a rename moves the split, never the label
    let from = dir.path().join("cmd03/take0.wav");
    fs::rename(&from, dir.path().join("cmd03/renamed.wav")).unwrap();
    let r = scan_folder_corpus(dir.path(), &refs, 17_600).unwrap();
    assert_eq!(entry(&r, "cmd03/renamed.wav").label, 3);

    fs::create_dir_all(dir.path().join("empty")).unwrap();
    let mut with_empty = refs.clone();
    with_empty.push("empty");
    let w = scan_folder_corpus(dir.path(), &with_empty, 17_600).unwrap();
    assert_eq!(w.warnings.len(), 1);
    assert!(matches!(
        scan_folder_corpus(dir.path(), &["cmd00", "nope"], 17_600),
        Err(Error::DatasetLayout(_))
    ));
}

#[test]
fn name_hash_split_proportions() {
    let n = 20_000;
    let mut counts = [0usize; 3];
    for i in 0..n {
        counts[split_for_name(&format!("clip_{i}.wav")) as usize] += 1;
    }
    let share = |c: usize| c as f64 / n as f64;
    assert!((share(counts[0]) - 0.8).abs() < 0.015, "{counts:?}");
    assert!((share(counts[1]) - 0.1).abs() < 0.01, "{counts:?}");
    assert!((share(counts[2]) - 0.1).abs() < 0.01, "{counts:?}");
}

#[test]
fn silence_sampling() {
    let pool = BackgroundPool::from_clips(vec![tone(100, 50.0, 0.9), tone(5000, 440.0, 0.8)]);
    let a = pool.sample(1000, 17).unwrap();
    let b = pool.sample(1000, 17).unwrap();
    assert_eq!(a, b);
    for seed in 0..50 {
        let s = pool.sample(1000, seed).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.samples().iter().all(|v| v.abs() <= 0.8 + 1e-6));
    }
    let zeros = BackgroundPool::from_clips(vec![AudioClip::from_samples(vec![0.0; 3000]).unwrap()]);
    assert!(zeros.sample(1000, 3).unwrap().samples().iter().all(|&v| v == 0.0));
    assert!(matches!(pool.sample(6000, 1), Err(Error::SilenceUnavailable(6000))));
    assert!(matches!(sample_silence(&[], 10, 1), Err(Error::SilenceUnavailable(10))));
}

// ---------- colored noise ----------

/// Welch estimate: Hann-windowed segments, direct DFT, averaged periodograms.
fn welch(x: &[f32], seg: usize, acc: &mut [f64]) {
    let win: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let mut start = 0;
    while start + seg <= x.len() {
        for (k, a) in acc.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..seg {
                let ph = 2.0 * std::f64::consts::PI * (k * i) as f64 / seg as f64;
                let v = x[start + i] as f64 * win[i];
                re += v * ph.cos();
                im -= v * ph.sin();
            }
            *a += re * re + im * im;
        }
        start += seg / 2;
    }
}

/// Least-squares slope of 10 log10(P) against log2(f), in dB per octave.
fn slope_db_per_octave(alpha: f64) -> f64 {
    let seg = 128;
    let mut acc = vec![0.0; seg / 2 + 1];
    for r in 0..24 {
        welch(colored_noise(4096, alpha, 1000 + r).unwrap().samples(), seg, &mut acc);
    }
    let pts: Vec<(f64, f64)> = (4..=48).map(|k| ((k as f64).log2(), 10.0 * acc[k].log10())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn noise_spectral_slopes() {
    let white = slope_db_per_octave(0.0);
    assert!(white.abs() < 0.3, "white {white}");
    let pink = slope_db_per_octave(1.0);
    assert!((pink + 3.0).abs() < 0.6, "pink {pink}");
    let brown = slope_db_per_octave(2.0);
    assert!((brown + 6.0).abs() < 1.0, "brown {brown}");
}

#[test]
fn noise_power_mean_and_determinism() {
    for alpha in [0.0, 1.0, 2.0] {
        for n in [2, 3, 1000, 16_000, 17_600] {
            let c = colored_noise(n, alpha, 5).unwrap();
            assert_eq!(c.len(), n);
            assert!((c.power() - 1.0).abs() < 1e-6, "alpha {alpha} n {n}: {}", c.power());
            let mean = c.samples().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "alpha {alpha} n {n}: mean {mean}");
        }
        assert_eq!(
            colored_noise(500, alpha, 9).unwrap(),
            colored_noise(500, alpha, 9).unwrap()
        );
    }
    assert!(colored_noise(1, 0.0, 1).is_err());
    assert!(colored_noise(100, 2.5, 1).is_err());
    assert_eq!(NoiseKind::Pink.alpha(), 1.0);
    assert_eq!("brown".parse::<NoiseKind>().unwrap(), NoiseKind::Brown);
}

// ---------- SNR mixing ----------

fn snr_db(clip: &AudioClip, mixed: &AudioClip) -> f64 {
    let noise: Vec<f64> = mixed
        .samples()
        .iter()
        .zip(clip.samples())
        .map(|(&m, &c)| m as f64 - c as f64)
        .collect();
    let pn = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    10.0 * (clip.power() / pn).log10()
}

#[test]
fn snr_mixing_examples() {
    let c = tone(1600, 440.0, 0.5);
    let n = AudioClip::from_samples(c.samples().iter().rev().copied().collect()).unwrap();
    assert_eq!(noise_scale(c.power(), n.power(), 0.0).unwrap(), 1.0);
    let k = noise_scale(2.0, 1.0, 10.0).unwrap();
    assert!((k * k - 0.2).abs() < 1e-15);
    let silent = AudioClip::from_samples(vec![0.0; 1600]).unwrap();
    assert!(matches!(mix_at_snr(&silent, &n, 0.0), Err(Error::UndefinedSnr)));
    assert_eq!(mix_at_snr(&c, &n, f64::INFINITY).unwrap(), c);
    assert!(mix_at_snr(&c, &tone(10, 1.0, 1.0), 0.0).is_err());
    // no clipping at very low SNR
    let loud = mix_at_snr(&c, &colored_noise(1600, 1.0, 2).unwrap(), -20.0).unwrap();
    assert!(loud.samples().iter().any(|v| v.abs() > 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_snr_matches_request(seed in 0u64..10_000, snr in -15.0f64..25.0, amp in 0.01f32..1.0) {
        let c = AudioClip::from_samples(uniform_vec(4000, -1.0, 1.0, seed).into_iter().map(|v| v as f32 * amp).collect()).unwrap();
        let n = colored_noise(4000, (seed % 3) as f64, seed + 1).unwrap();
        let m = mix_at_snr(&c, &n, snr).unwrap();
        prop_assert!((snr_db(&c, &m) - snr).abs() < 0.01);
    }
}

// ---------- batching ----------

fn folder_loader(dir: &Path) -> Loader {
    for c in ["left", "right", "up"] {
        for f in 0..7 {
            put(
                dir,
                &format!("{c}/{c}{f}.wav"),
                &tone(3000, 300.0 + 40.0 * f as f64, 0.2),
            );
        }
    }
    let mut m = scan_folder_corpus(dir, &["left", "right", "up"], 4000).unwrap();
    for e in &mut m.entries {
        e.split = Split::Train;
    }
    Loader::new(m).unwrap().with_fractions(0.0, 0.0)
}

#[test]
fn folder_epoch_is_a_permutation() {
    let dir = tempfile::tempdir().unwrap();
    let loader = folder_loader(dir.path());
    let batches: Vec<Batch> = loader
        .batches(Split::Train, 4, 3)
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
    assert_eq!(sizes, vec![4, 4, 4, 4, 4, 1]);
    let plan = loader.plan(Split::Train, 3).unwrap();
    let mut paths: Vec<_> = plan
        .examples
        .iter()
        .map(|e| match e {
            Example::File { path, .. } => path.clone(),
            other => panic!("{other:?}"),
        })
        .collect();
    paths.sort();
    let mut all: Vec<_> = loader.manifest().entries.iter().map(|e| e.path.clone()).collect();
    all.sort();
    assert_eq!(paths, all);
    assert_eq!(batches[0].features.shape(), &[4, 1, 40, loader.frames()]);
    assert_eq!(loader.frames(), 1 + (4000 - 480) / 160);
    assert!(matches!(loader.plan(Split::Test, 3), Err(Error::EmptySplit(_))));
}

#[test]
fn batches_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let loader = folder_loader(dir.path());
    let run = |seed| -> Vec<(Vec<usize>, Vec<f32>)> {
        loader
            .batches(Split::Train, 5, seed)
            .unwrap()
            .map(|b| {
                let b = b.unwrap();
                (b.labels, b.features.to_vec())
            })
            .collect()
    };
    let a = run(11);
    assert_eq!(a, run(11));
    assert_ne!(
        loader.plan(Split::Train, 11).unwrap(),
        loader.plan(Split::Train, 12).unwrap()
    );
    // cached and uncached extraction agree
    let dir2 = tempfile::tempdir().unwrap();
    let fresh = folder_loader(dir2.path()).with_cache(false);
    let plan = fresh.plan(Split::Train, 11).unwrap();
    let labels: Vec<usize> = plan.examples.iter().map(Example::label).collect();
    assert_eq!(labels, a.iter().flat_map(|b| b.0.clone()).collect::<Vec<_>>());
    let first = fresh.batch(&plan.examples[..5]).unwrap();
    assert_eq!(first.features.to_vec(), a[0].1);
}

#[test]
fn gsc_epoch_composition() {
    let dir = tempfile::tempdir().unwrap();
    gsc_tree(dir.path());
    // more known files so the fractions are measurable
    for (i, k) in GSC_KEYWORDS.iter().enumerate() {
        for f in 0..6 {
            put(
                dir.path(),
                &format!("{k}/extra{f}.wav"),
                &tone(3000, 300.0 + i as f64, 0.2),
            );
        }
    }
    for f in 0..80 {
        put(dir.path(), &format!("sheila/more{f}.wav"), &tone(3000, 700.0, 0.2));
    }
    let loader = Loader::new(scan(dir.path()).unwrap()).unwrap();
    let plan = loader.plan(Split::Train, 5).unwrap();
    let count = |l: usize| plan.examples.iter().filter(|e| e.label() == l).count();
    let known = (0..10).map(count).sum::<usize>();
    let total = plan.examples.len();
    assert_eq!(known, 10 * 8 - 2);
    let expected = (known as f64 / 0.8).round();
    assert_eq!(total as f64, known as f64 + (0.1 * expected).round() * 2.0);
    assert_eq!(count(10), count(11));
    assert!(((count(10) as f64 / total as f64) - 0.1).abs() < 0.01);
    // unknown files are resampled per epoch
    let unknown = |seed| -> Vec<Example> {
        loader
            .plan(Split::Train, seed)
            .unwrap()
            .examples
            .into_iter()
            .filter(|e| e.label() == 10)
            .collect()
    };
    let mut a = unknown(5);
    let mut b = unknown(6);
    a.sort_by_key(|e| format!("{e:?}"));
    b.sort_by_key(|e| format!("{e:?}"));
    assert_ne!(a, b);

    let sizes: usize = loader
        .batches(Split::Train, 16, 5)
        .unwrap()
        .map(|b| b.unwrap().len())
        .sum();
    assert_eq!(sizes, total);

    let no_bg = {
        let mut m = scan(dir.path()).unwrap();
        m.background_paths.clear();
        Loader::new(m).unwrap()
    };
    assert!(matches!(no_bg.plan(Split::Train, 1), Err(Error::SilenceUnavailable(_))));
}

#[test]
fn noisy_features_differ_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let clean = folder_loader(dir.path());
    let plan = clean.plan(Split::Train, 1).unwrap();
    let ex = &plan.examples[..3];
    let spec = NoiseSpec {
        kind: NoiseKind::Pink,
        snr_db: 0.0,
        seed: 4,
    };
    let noisy = folder_loader(dir.path()).with_noise(Some(spec));
    let a = noisy.batch(ex).unwrap();
    let b = noisy.batch(ex).unwrap();
    assert_eq!(a.features.to_vec(), b.features.to_vec());
    assert_ne!(a.features.to_vec(), clean.batch(ex).unwrap().features.to_vec());
    let clip = noisy.clip(&ex[0]).unwrap();
    let base = clean.clip(&ex[0]).unwrap();
    assert!((snr_db(&base, &clip)).abs() < 0.01);
}

#[test]
fn keyword_subset_drops_filler_classes() {
    let dir = tempfile::tempdir().unwrap();
    gsc_tree(dir.path());
    let m = scan_gsc(
        dir.path(),
        &dir.path().join("validation_list.txt"),
        &dir.path().join("testing_list.txt"),
        &["yes", "no"],
    )
    .unwrap();
    assert_eq!(m.labels, vec!["yes", "no", "_unknown_", "_silence_"]);
    let sub = m.keywords_only();
    assert_eq!(sub.labels, vec!["yes", "no"]);
    assert_eq!(sub.entries.len(), 4);
    assert_eq!(entry(&sub, "no/a.wav").label, 1);
    assert_eq!((sub.unknown_label, sub.silence_label), (None, None));
    let plan = Loader::new(sub).unwrap().plan(Split::Train, 1).unwrap();
    assert_eq!(plan.examples.len(), 2);
}
