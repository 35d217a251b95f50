use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use kgcap::dataset::Vocabulary;
use kgcap::nn::{checkpoint, CaptionModel, Mode, ModelDims, ModelKind};
use kgcap_ffi::*;

const GRAPH: &str = "RelatedTo,cup,kitchen,2\nRelatedTo,oven,kitchen\nAtLocation,cup,table\n";
const VECTORS: &str = "cup 1 0\nkitchen 1 1\noven 0 1\ntable -1 0\n";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    kgcap_string_free(s);
    out
}

unsafe fn last_error() -> String {
    CStr::from_ptr(kgcap_last_error()).to_string_lossy().into_owned()
}

unsafe fn fixtures() -> (*mut KgcapGraph, *mut KgcapVectors) {
    let mut g = ptr::null_mut();
    let mut v = ptr::null_mut();
    assert_eq!(kgcap_graph_from_csv(c(GRAPH).as_ptr(), &mut g), KgcapStatus::Ok);
    assert_eq!(kgcap_vectors_from_text(c(VECTORS).as_ptr(), &mut v), KgcapStatus::Ok);
    (g, v)
}

#[test]
fn graph_and_vector_handles() {
    unsafe {
        let (g, v) = fixtures();
        let mut n = 0usize;
        assert_eq!(kgcap_graph_term_count(g, &mut n), KgcapStatus::Ok);
        assert_eq!(n, 4);
        assert_eq!(kgcap_graph_edge_count(g, &mut n), KgcapStatus::Ok);
        assert_eq!(n, 3);
        let mut s = ptr::null_mut();
        assert_eq!(
            kgcap_graph_neighbors_json(g, c("cup").as_ptr(), 1, &mut s),
            KgcapStatus::Ok
        );
        let reached: serde_json::Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(reached[0]["term"], "kitchen");
        assert_eq!(reached[1]["term"], "table");

        assert_eq!(kgcap_vectors_dim(v, &mut n), KgcapStatus::Ok);
        assert_eq!(n, 2);
        let mut buf = [0.0; 2];
        assert_eq!(
            kgcap_vectors_get(v, c("kitchen").as_ptr(), buf.as_mut_ptr(), 2),
            KgcapStatus::Ok
        );
        assert_eq!(buf, [1.0, 1.0]);
        assert_eq!(
            kgcap_vectors_get(v, c("zebra").as_ptr(), buf.as_mut_ptr(), 2),
            KgcapStatus::Lookup
        );
        assert!(last_error().contains("zebra"));

        let mut d = 0.0;
        let (a, b) = ([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(
            kgcap_cosine_distance(a.as_ptr(), b.as_ptr(), 2, &mut d),
            KgcapStatus::Ok
        );
        assert!((d - 1.0).abs() < 1e-12);

        let mut q = ptr::null_mut();
        let zero = c(r#"{"beta": "constant", "beta_value": 0.0}"#);
        assert_eq!(kgcap_retrofit(v, g, zero.as_ptr(), &mut q), KgcapStatus::Ok);
        assert_eq!(
            kgcap_vectors_get(q, c("cup").as_ptr(), buf.as_mut_ptr(), 2),
            KgcapStatus::Ok
        );
        assert_eq!(buf, [1.0, 0.0]);
        kgcap_vectors_free(q);
        assert_eq!(kgcap_retrofit(v, g, ptr::null(), &mut q), KgcapStatus::Ok);
        kgcap_vectors_free(q);

        kgcap_graph_free(g);
        kgcap_vectors_free(v);
    }
}

#[test]
fn term_sets_and_evaluation() {
    unsafe {
        let (g, v) = fixtures();
        let dets = c(r#"[{"label": "cup", "confidence": 0.9}, {"label": "oven", "confidence": 0.1}]"#);
        let mut s = ptr::null_mut();
        assert_eq!(
            kgcap_term_sets_json(g, v, dets.as_ptr(), ptr::null(), &mut s),
            KgcapStatus::Ok
        );
        let sets: serde_json::Value = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(sets["objects"], serde_json::json!(["cup"]));
        assert_eq!(sets["direct"][0], "cup");

        let lines = c(concat!(
            r#"{"image_id": "1", "candidate": "a red car parks", "references": ["a red car parks"]}"#,
            "\n",
            r#"{"image_id": "2", "candidate": "two dogs run fast", "references": ["two dogs run fast"]}"#,
            "\n",
            r#"{"image_id": "3", "candidate": "hot soup in bowl", "references": ["hot soup in bowl"]}"#,
            "\n"
        ));
        assert_eq!(kgcap_evaluate_json(lines.as_ptr(), &mut s), KgcapStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(s)).unwrap();
        assert!((report["native"]["bleu1"].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((report["native"]["cider_d"].as_f64().unwrap() - 10.0).abs() < 1e-9);

        kgcap_graph_free(g);
        kgcap_vectors_free(v);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(kgcap_graph_from_csv(ptr::null(), &mut g), KgcapStatus::NullPointer);
        assert_eq!(
            kgcap_graph_from_csv(c("RelatedTo,a\n").as_ptr(), &mut g),
            KgcapStatus::Parse
        );
        assert!(last_error().contains("line 1"));
        assert_eq!(
            kgcap_graph_load(c("/no/such/file.csv").as_ptr(), &mut g),
            KgcapStatus::Io
        );
        assert!(g.is_null());
        let mut s = ptr::null_mut();
        assert_eq!(kgcap_evaluate_json(c("not json").as_ptr(), &mut s), KgcapStatus::Parse);
        let mut n = 0usize;
        assert_eq!(kgcap_graph_term_count(ptr::null(), &mut n), KgcapStatus::NullPointer);
        let (g, v) = fixtures();
        assert_eq!(kgcap_graph_term_count(g, &mut n), KgcapStatus::Ok);
        assert!(kgcap_last_error().is_null());
        let bad = c(r#"{"beta": "sideways"}"#);
        let mut q = ptr::null_mut();
        assert_eq!(kgcap_retrofit(v, g, bad.as_ptr(), &mut q), KgcapStatus::Json);
        kgcap_graph_free(g);
        kgcap_vectors_free(v);
        kgcap_string_free(ptr::null_mut());
    }
}

fn small_checkpoint(dir: &Path) -> PathBuf {
    let vocab = Vocabulary::from_words(["hello"]).unwrap();
    let dims = ModelDims {
        vocab: 5,
        embed: 2,
        hidden: 2,
        feature: 3,
        term_dim: 0,
        term_embed: 0,
        term_hidden: 0,
    };
    let mut m = CaptionModel::zeros(ModelKind::Caption(Mode::Image), dims, vocab);
    m.params.b_out.data_mut()[4] = 1.0;
    let path = dir.join("model.ckpt");
    checkpoint::save(&m, std::fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn model_captions_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_checkpoint(dir.path());
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(
            kgcap_model_load(c(path.to_str().unwrap()).as_ptr(), &mut m),
            KgcapStatus::Ok
        );
        let feature = [0.1, 0.2, 0.3];
        let mut s = ptr::null_mut();
        let status = kgcap_model_caption_json(m, feature.as_ptr(), 3, ptr::null(), ptr::null(), 2, 5, &mut s);
        assert_eq!(status, KgcapStatus::Ok, "{}", last_error());
        let beams: Vec<serde_json::Value> = serde_json::from_str(&take(s)).unwrap();
        assert_eq!(beams.len(), 2);
        assert!(beams[0]["logprob"].as_f64().unwrap() >= beams[1]["logprob"].as_f64().unwrap());
        let status = kgcap_model_caption_json(m, feature.as_ptr(), 2, ptr::null(), ptr::null(), 2, 5, &mut s);
        assert_ne!(status, KgcapStatus::Ok);
        let status = kgcap_model_caption_json(m, feature.as_ptr(), 3, ptr::null(), ptr::null(), 0, 5, &mut s);
        assert_eq!(status, KgcapStatus::Config);
        kgcap_model_free(m);
    }
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_the_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("kgcap.h").exists());
    let profile_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = profile_dir.join("libkgcap_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "kgcap.h"

int main(void) {
    KgcapGraph *g = NULL;
    size_t n = 0;
    if (kgcap_graph_from_csv("RelatedTo,cup,kitchen\nRelatedTo,oven,kitchen\n", &g) != KGCAP_STATUS_OK) return 1;
    if (kgcap_graph_term_count(g, &n) != KGCAP_STATUS_OK || n != 3) return 2;
    char *json = NULL;
    if (kgcap_graph_neighbors_json(g, "cup", 2, &json) != KGCAP_STATUS_OK) return 3;
    printf("%s\n", json);
    kgcap_string_free(json);
    kgcap_graph_free(g);
    if (kgcap_graph_from_csv(NULL, &g) != KGCAP_STATUS_NULL_POINTER) return 4;
    if (strstr(kgcap_last_error(), "null") == NULL) return 5;
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"kitchen\"") && text.contains("\"oven\""), "{text}");
}
