//! Fixtures shared by the integration tests, benches and CLI tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use divesound::embedding::{EmbeddingSet, FrameRef, Modality};
use divesound::matcher::{text_key, DatasetInputs};
use divesound::taxonomy::{SoundClass, Subcategory, Taxonomy};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Shape of a planted dataset: `classes[c][s]` clips in subcategory `s` of
/// class `c`.
#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub classes: Vec<Vec<usize>>,
    pub frames_per_clip: usize,
    pub dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl PlantedSpec {
    /// 4 classes with 2–3 subcategories, 40 clips each, 3 frames, σ = 0.05.
    pub fn standard(seed: u64) -> Self {
        Self {
            classes: vec![vec![40, 40], vec![40, 40, 40], vec![40, 40], vec![40, 40, 40]],
            frames_per_clip: 3,
            dim: 32,
            sigma: 0.05,
            seed,
        }
    }
}

pub struct Planted {
    pub taxonomy: Taxonomy,
    pub clip_classes: BTreeMap<String, String>,
    pub audio: EmbeddingSet,
    pub frames: EmbeddingSet,
    pub text: EmbeddingSet,
    pub augmented_text: EmbeddingSet,
    /// clip id -> (class, subcategory) it was generated from
    pub truth: BTreeMap<String, (String, String)>,
}

impl Planted {
    pub fn inputs(&self) -> DatasetInputs<'_> {
        DatasetInputs {
            taxonomy: &self.taxonomy,
            clip_classes: &self.clip_classes,
            audio: &self.audio,
            frames: &self.frames,
            text: &self.text,
            augmented_text: &self.augmented_text,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `count` orthonormal random directions (Gram–Schmidt).
pub fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    assert!(count <= dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            basis.push(unit(&v));
        }
    }
    basis
}

fn noisy_unit(rng: &mut ChaCha8Rng, centre: &[f64], sigma: f64) -> Vec<f32> {
    let v: Vec<f64> = centre
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + sigma * z
        })
        .collect();
    unit(&v).into_iter().map(|x| x as f32).collect()
}

pub fn planted(spec: &PlantedSpec) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total_subs: usize = spec.classes.iter().map(Vec::len).sum();
    let image_centres = orthonormal(&mut rng, total_subs, spec.dim);
    let audio_centres = orthonormal(&mut rng, total_subs, spec.dim);

    let mut classes = Vec::new();
    let mut text = EmbeddingSet::new(Modality::Text, spec.dim).unwrap();
    let mut augmented = EmbeddingSet::new(Modality::Text, spec.dim).unwrap();
    let mut plan: Vec<(String, String, usize)> = Vec::new();
    let mut k = 0;
    for (c, subs) in spec.classes.iter().enumerate() {
        let class_name = format!("class{c}");
        let mut subcategories = Vec::new();
        for (s, &n) in subs.iter().enumerate() {
            let sub_name = format!("sub{s}");
            let key = text_key(&class_name, &sub_name);
            text.push(key.clone(), image_centres[k].iter().map(|&x| x as f32).collect())
                .unwrap();
            augmented
                .push(key, audio_centres[k].iter().map(|&x| x as f32).collect())
                .unwrap();
            subcategories.push(Subcategory::new(sub_name.clone(), ["adj a", "adj b"]));
            for _ in 0..n {
                plan.push((class_name.clone(), sub_name.clone(), k));
            }
            k += 1;
        }
        classes.push(SoundClass {
            name: class_name.clone(),
            source_labels: vec![format!("{class_name} label")],
            subcategories,
        });
    }

    // Clip ids carry no hint of the planted subcategory.
    plan.shuffle(&mut rng);
    let mut audio = EmbeddingSet::new(Modality::Audio, spec.dim).unwrap();
    let mut frames = EmbeddingSet::new(Modality::Image, spec.dim).unwrap();
    let mut clip_classes = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for (i, (class, sub, k)) in plan.into_iter().enumerate() {
        let clip = format!("clip{i:05}");
        audio
            .push(clip.clone(), noisy_unit(&mut rng, &audio_centres[k], spec.sigma))
            .unwrap();
        for f in 0..spec.frames_per_clip {
            frames
                .push(
                    FrameRef::new(clip.clone(), f as u32).id(),
                    noisy_unit(&mut rng, &image_centres[k], spec.sigma),
                )
                .unwrap();
        }
        clip_classes.insert(clip.clone(), class.clone());
        truth.insert(clip, (class, sub));
    }
    Planted {
        taxonomy: Taxonomy::new(classes),
        clip_classes,
        audio,
        frames,
        text,
        augmented_text: augmented,
        truth,
    }
}

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

type Handler = dyn Fn(&HttpRequest) -> (u16, String) + Send + Sync;

/// Single-purpose HTTP/1.1 server answering every request with `handler`
/// and closing the connection. It lives until the test process exits.
pub struct StubServer {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(&HttpRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = Arc::clone(&hits);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                let counter = Arc::clone(&counter);
                thread::spawn(move || {
                    if let Some(req) = read_request(&stream) {
                        counter.fetch_add(1, Ordering::SeqCst);
                        let (status, body) = handler(&req);
                        let _ = write_response(&stream, status, &body);
                    }
                });
            }
        });
        Self { base_url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn read_request(stream: &TcpStream) -> Option<HttpRequest> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some(HttpRequest {
        method,
        path,
        headers,
        body: String::from_utf8(body).ok()?,
    })
}

fn write_response(mut stream: &TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        422 => "Unprocessable Entity",
        429 => "Too Many Requests",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

/// A local address nothing listens on.
pub fn closed_port_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}
