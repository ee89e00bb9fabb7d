use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use datobs_cli::server::{router, ImageEntry, ServerConfig};
use datobs_core::corpus::sha256_hex;
use datobs_core::imaging::{encode_pgm, GrayImage};
use http_body_util::BodyExt;
use std::path::Path;
use tower::ServiceExt;

fn pgm(w: usize, h: usize, v: u8) -> Vec<u8> {
    encode_pgm(&GrayImage::filled(w, h, v).unwrap())
}

fn png_rgb(w: u32, h: u32) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut wr = enc.write_header().unwrap();
    wr.write_image_data(&vec![200u8; (w * h * 3) as usize]).unwrap();
    wr.finish().unwrap();
    out
}

fn app(dir: &Path, read_only: bool) -> Router {
    router(&ServerConfig {
        corpus_dir: dir.to_path_buf(),
        port: 0,
        read_only,
        ui_dist: None,
    })
    .unwrap()
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, String, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ctype, bytes)
}

fn annotation(image: &[u8], boxes: &[(i64, i64, i64, i64, &str)]) -> String {
    let boxes: Vec<_> = boxes
        .iter()
        .map(|(x, y, w, h, l)| serde_json::json!({"x": x, "y": y, "w": w, "h": h, "label": l}))
        .collect();
    serde_json::json!({
        "version": 1,
        "image_path": "whatever.pgm",
        "image_sha256": sha256_hex(image),
        "boxes": boxes,
    })
    .to_string()
}

fn error_kind(body: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn empty_dir_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let (status, _, body) = send(&app(dir.path(), false), Method::GET, "/api/images", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"[]");
}

#[tokio::test]
async fn listing_is_recursive_and_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let img = pgm(4, 4, 9);
    std::fs::create_dir_all(dir.path().join("b/inner")).unwrap();
    std::fs::write(dir.path().join("b/inner/z.pgm"), &img).unwrap();
    std::fs::write(dir.path().join("a.png"), png_rgb(2, 2)).unwrap();
    std::fs::write(dir.path().join("c.pgm"), &img).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    std::fs::write(dir.path().join("c.pgm.ann.json"), annotation(&img, &[(0, 0, 2, 2, "yan")])).unwrap();

    let (status, _, body) = send(&app(dir.path(), false), Method::GET, "/api/images", None).await;
    assert_eq!(status, StatusCode::OK);
    let entries: Vec<ImageEntry> = serde_json::from_slice(&body).unwrap();
    let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["a.png", "b/inner/z.pgm", "c.pgm"]);
    assert_eq!(entries.iter().filter(|e| e.has_annotation).count(), 1);
    assert!(entries[2].has_annotation);
    assert_eq!(entries[2].box_count, Some(1));
    assert_eq!(entries[1].image_sha256, sha256_hex(&img));
}

#[tokio::test]
async fn labels_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (status, _, body) = send(&app(dir.path(), false), Method::GET, "/api/labels", None).await;
    assert_eq!(status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    let arr = v.as_array().unwrap();
    assert_eq!(arr.len(), 33);
    let yagw = arr.iter().find(|e| e["ascii_name"] == "yagw").unwrap();
    assert_eq!(yagw["unicode"], serde_json::json!(["U+2D33", "U+2D6F"]));
}

#[tokio::test]
async fn image_bytes_with_content_type() {
    let dir = tempfile::tempdir().unwrap();
    let png = png_rgb(3, 2);
    std::fs::create_dir(dir.path().join("sub")).unwrap();
    std::fs::write(dir.path().join("sub/s.png"), &png).unwrap();
    std::fs::write(dir.path().join("g.pgm"), pgm(1, 1, 3)).unwrap();
    let app = app(dir.path(), false);
    let (status, ctype, body) = send(&app, Method::GET, "/api/image/sub/s.png", None).await;
    assert_eq!((status, ctype.as_str()), (StatusCode::OK, "image/png"));
    assert_eq!(body, png);
    let (_, ctype, _) = send(&app, Method::GET, "/api/image/g.pgm", None).await;
    assert_eq!(ctype, "image/x-portable-graymap");
    let (status, _, _) = send(&app, Method::GET, "/api/image/missing.png", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn put_then_get_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = pgm(40, 30, 128);
    std::fs::write(dir.path().join("sign.pgm"), &img).unwrap();
    let app = app(dir.path(), false);

    let (status, _, _) = send(&app, Method::GET, "/api/annotation/sign.pgm", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let body = annotation(&img, &[(1, 2, 10, 12, "yan"), (12, 2, 9, 12, "ya"), (22, 3, 10, 11, "yan")]);
    let (status, ctype, stored) = send(&app, Method::PUT, "/api/annotation/sign.pgm", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&stored));
    assert_eq!(ctype, "application/json");
    let on_disk = std::fs::read(dir.path().join("sign.pgm.ann.json")).unwrap();
    assert_eq!(on_disk, stored);
    let v: serde_json::Value = serde_json::from_slice(&stored).unwrap();
    assert_eq!(v["image_path"], "sign.pgm");
    assert_eq!(v["boxes"].as_array().unwrap().len(), 3);

    let (status, _, got) = send(&app, Method::GET, "/api/annotation/sign.pgm", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got, stored);

    // Storing the stored form again changes nothing.
    let (_, _, again) = send(&app, Method::PUT, "/api/annotation/sign.pgm", Some(String::from_utf8(got).unwrap())).await;
    assert_eq!(again, stored);
}

#[tokio::test]
async fn invalid_bodies_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let img = pgm(8, 8, 1);
    std::fs::write(dir.path().join("s.pgm"), &img).unwrap();
    let app = app(dir.path(), false);
    let cases = [
        (annotation(&img, &[(0, 0, 2, 2, "xyz")]), "UnknownLabel"),
        (annotation(&img, &[(0, 0, 0, 2, "yan")]), "BadGeometry"),
        ("{not json".to_string(), "ParseError"),
        (annotation(&img, &[]).replace("\"boxes\"", "\"extra\":1,\"boxes\""), "ParseError"),
        (annotation(b"other bytes", &[]), "DigestMismatch"),
    ];
    for (body, kind) in cases {
        let (status, _, resp) = send(&app, Method::PUT, "/api/annotation/s.pgm", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{kind}");
        assert_eq!(error_kind(&resp), kind);
    }
    assert!(!dir.path().join("s.pgm.ann.json").exists());
}

#[tokio::test]
async fn traversal_is_rejected() {
    let outer = tempfile::tempdir().unwrap();
    let corpus = outer.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let secret = pgm(2, 2, 7);
    std::fs::write(outer.path().join("secret.pgm"), &secret).unwrap();
    let app = app(&corpus, false);
    let body = annotation(&secret, &[]);
    for uri in [
        "/api/annotation/../secret.pgm",
        "/api/annotation/%2e%2e/secret.pgm",
        "/api/annotation/a/../../secret.pgm",
    ] {
        let (status, _, resp) = send(&app, Method::PUT, uri, Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(error_kind(&resp), "BadId");
        let (status, _, _) = send(&app, Method::GET, &uri.replace("annotation", "image"), None).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
    }
    assert!(!outer.path().join("secret.pgm.ann.json").exists());
}

#[cfg(unix)]
#[tokio::test]
async fn symlink_out_of_corpus_is_rejected() {
    let outer = tempfile::tempdir().unwrap();
    let corpus = outer.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    std::fs::write(outer.path().join("secret.pgm"), pgm(2, 2, 7)).unwrap();
    std::os::unix::fs::symlink(outer.path().join("secret.pgm"), corpus.join("link.pgm")).unwrap();
    let (status, _, _) = send(&app(&corpus, false), Method::GET, "/api/image/link.pgm", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_id_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let (status, _, resp) = send(
        &app(dir.path(), false),
        Method::PUT,
        "/api/annotation/nope.png",
        Some(annotation(b"", &[])),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_kind(&resp), "NotFound");
}

#[tokio::test]
async fn read_only_refuses_writes() {
    let dir = tempfile::tempdir().unwrap();
    let img = pgm(8, 8, 1);
    std::fs::write(dir.path().join("s.pgm"), &img).unwrap();
    let app = app(dir.path(), true);
    let (status, _, resp) = send(&app, Method::PUT, "/api/annotation/s.pgm", Some(annotation(&img, &[]))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(error_kind(&resp), "ReadOnly");
    assert!(!dir.path().join("s.pgm.ann.json").exists());
    let (status, _, _) = send(&app, Method::GET, "/api/images", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_puts_leave_a_complete_document() {
    let dir = tempfile::tempdir().unwrap();
    let img = pgm(64, 64, 50);
    std::fs::write(dir.path().join("s.pgm"), &img).unwrap();
    let app = app(dir.path(), false);
    let bodies: Vec<String> = (0..24)
        .map(|i| {
            let boxes: Vec<(i64, i64, i64, i64, &str)> = (0..=i).map(|j| (j, j, 5, 5, "yaz")).collect();
            annotation(&img, &boxes)
        })
        .collect();
    let mut handles = Vec::new();
    for body in bodies.clone() {
        let app = app.clone();
        handles.push(tokio::spawn(async move { send(&app, Method::PUT, "/api/annotation/s.pgm", Some(body)).await }));
    }
    let mut responses = Vec::new();
    for h in handles {
        let (status, _, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        responses.push(body);
    }
    let on_disk = std::fs::read(dir.path().join("s.pgm.ann.json")).unwrap();
    assert!(responses.contains(&on_disk), "stored file is not one of the written documents");
    let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(leftovers, 2, "temporary files left behind");
}

#[tokio::test]
async fn serves_ui_bundle() {
    let corpus = tempfile::tempdir().unwrap();
    let dist = tempfile::tempdir().unwrap();
    std::fs::write(dist.path().join("index.html"), "<!doctype html><title>editor</title>").unwrap();
    let app = router(&ServerConfig {
        corpus_dir: corpus.path().to_path_buf(),
        port: 0,
        read_only: false,
        ui_dist: Some(dist.path().to_path_buf()),
    })
    .unwrap();
    let (status, ctype, body) = send(&app, Method::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(ctype.starts_with("text/html"));
    assert!(String::from_utf8(body).unwrap().contains("editor"));
    let (status, _, _) = send(&app, Method::GET, "/api/labels", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn missing_corpus_dir_fails() {
    assert!(router(&ServerConfig {
        corpus_dir: "/definitely/not/here".into(),
        port: 0,
        read_only: false,
        ui_dist: None,
    })
    .is_err());
}
