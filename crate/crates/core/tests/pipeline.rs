use parasynth::analysis::{log_to_db, AnalysisConfig, Analyzer};
use parasynth::dataset::{extract_sustain, frame_clip, frame_len_for, load_wav, SustainConfig};
use parasynth::envelope::{cc_distance_sq, fit_frame, pad, sample_at_harmonics, SpectralGrid, TaeConfig};
use parasynth::experiments::{generate_note, samples_of, skip_pitch_training, Corpus};
use parasynth::formats::{read_envelopes, write_envelopes, EnvelopeRecord, EnvelopeTable};
use parasynth::model::{train, LatentCode, TrainConfig};
use parasynth::pitch::midi_to_hz;
use parasynth::synthetic::{corpus_table, generate_corpus, write_wav_dataset, CorpusConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FS: f64 = 48_000.0;

#[test]
fn wav_takes_to_envelope_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig {
        midis: vec![60, 65, 71],
        takes_per_pitch: 2,
        ..CorpusConfig::default()
    };
    let files = write_wav_dataset(dir.path(), &cfg, 0.5, 48_000).unwrap();
    assert_eq!(files.len(), 6);

    let grid = SpectralGrid::new(FS, 2048);
    let an = Analyzer::new(AnalysisConfig::default(), FS).unwrap();
    let mut records = vec![];
    for path in &files {
        let clip = load_wav(path, None).unwrap();
        let frame_len = frame_len_for(clip.sample_rate);
        let sustain = SustainConfig {
            min_len: frame_len,
            ..SustainConfig::default()
        };
        let region = extract_sustain(&clip, &sustain).unwrap();
        let table = frame_clip(&clip, region, frame_len, 256).unwrap();
        assert!(!table.frames.is_empty());
        let f = &table.frames[table.frames.len() / 2];
        let samples: Vec<f64> = f.samples.iter().map(|&s| s as f64).collect();
        let hf = an.analyze(&samples, midi_to_hz(f.midi as f64)).unwrap();
        let (env, fit) = fit_frame(&hf, grid, &TaeConfig::default()).unwrap();
        assert!(fit.converged);

        // the envelope rides on top of the analyzed harmonics (dominance only
        // holds at the nearest bin, hence the slack) and bridges the odd valley
        let amps = sample_at_harmonics(&env, hf.f0, hf.harmonics.len()).unwrap();
        // harmonics far below the strongest sit under 16-bit quantization noise
        let top = hf.harmonics.iter().map(|h| h.amp_log).fold(f64::NEG_INFINITY, f64::max);
        let errs: Vec<(usize, f64)> = hf
            .harmonics
            .iter()
            .zip(&amps)
            .filter(|(h, _)| log_to_db(h.amp_log) > log_to_db(top) - 60.0)
            .map(|(h, a)| (h.h, log_to_db(a.ln()) - log_to_db(h.amp_log)))
            .collect();
        assert!(errs.len() > 10, "{:?}", hf.harmonics.iter().map(|h| log_to_db(h.amp_log).round()).collect::<Vec<_>>());
        for &(h, e) in errs.iter().filter(|(h, _)| *h > 2) {
            assert!(e > -0.5, "{}: h={h} under by {e:.2} dB", f.take_id);
        }
        let mean = errs.iter().map(|(_, e)| e.abs()).sum::<f64>() / errs.len() as f64;
        assert!(mean < 0.5, "{}: mean error {mean:.2} dB", f.take_id);
        records.push(EnvelopeRecord {
            take_id: f.take_id.clone(),
            midi: f.midi,
            frame_index: f.frame_index,
            envelope: pad(&env).unwrap(),
        });
    }
    let k: Vec<usize> = records.iter().map(|r| r.envelope.k_cc).collect();
    assert_eq!(k, vec![91, 91, 68, 68, 48, 48]);

    let table = EnvelopeTable {
        sample_rate: 48_000,
        fft_size: 2048,
        records,
    };
    let path = dir.path().join("envelopes.vpen");
    write_envelopes(&table, &path).unwrap();
    let back = read_envelopes(&path).unwrap();
    assert_eq!(back.records.len(), 6);
    for (a, b) in table.records.iter().zip(&back.records) {
        assert_eq!(a.take_id, b.take_id);
        assert_eq!(a.envelope.k_cc, b.envelope.k_cc);
        // stored as f32
        assert!(a.envelope.x.iter().zip(&b.envelope.x).all(|(x, y)| (x - y).abs() < 1e-6 * (1.0 + x.abs())));
    }
}

#[test]
fn held_out_pitch_decodes_near_its_own_mean() {
    let cfg = CorpusConfig {
        takes_per_pitch: 10,
        ..CorpusConfig::default()
    };
    let grid = SpectralGrid::new(FS, 2048);
    let (family, corpus) = generate_corpus(&cfg, grid).unwrap();
    let table = corpus_table(&corpus, grid);
    let corpus = Corpus::new(table.records, corpus.split);

    let train_set = skip_pitch_training(&corpus, 65).unwrap();
    assert!(train_set.iter().all(|r| r.midi != 65));
    let data = samples_of(&train_set).unwrap();
    let tc = TrainConfig {
        epochs: 300,
        batch_size: 64,
        latent_dim: 8,
        ..TrainConfig::cvae()
    };
    let m = train(&data, &tc).unwrap();

    let z = LatentCode { z: vec![0.0; 8] };
    let decoded = m.decode(&z, Some(65.0)).unwrap();
    let dist = |midi: i32| {
        let mean = family.mean_envelope(midi as f64).unwrap();
        cc_distance_sq(&decoded[..mean.k_cc], &mean.x[..mean.k_cc])
    };
    let (own, below, above) = (dist(65), dist(62), dist(68));
    assert!(own < below && own < above, "65: {own:.3e}, 62: {below:.3e}, 68: {above:.3e}");

    // and renders as a steady harmonic note
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = generate_note(&m, midi_to_hz(65.0), 20, 0.05, &mut rng, grid).unwrap();
    assert_eq!(frames.len(), 20);
    assert!(frames.iter().all(|f| f.amps.len() == 67 && f.amps.iter().all(|a| a.is_finite() && *a > 0.0)));
}
