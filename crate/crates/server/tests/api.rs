mod common;

use std::collections::BTreeSet;

use chrono::Utc;
use serde_json::{json, Value};

use aviscape_core::classifier::{InferenceMode, RecognitionMode, ServiceRequest};
use aviscape_core::game::{GameEngine, RuleBook, Submission};
use aviscape_core::geo::{BBox, ClipRef, Detection, DetectionId, GeoPoint, Repository, TimeRange};
use aviscape_core::soundscape::{build_scene, SceneRequest};
use aviscape_server::ServerConfig;

use common::*;

fn here() -> GeoPoint {
    GeoPoint::new(45.07, 7.68).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_empty_scene() {
    let r = spawn(config()).await;
    let (status, body) = get(&r, "/v1/health", None).await;
    assert_eq!(status, 200);
    assert_schema("health", &body);
    assert_eq!(body["detections"], 0);

    let resp = r.client.get(r.url("/v1/scene?lat=45.07&lon=7.68&heading=0")).send().await.unwrap();
    assert_eq!(resp.headers()["cache-control"], "no-store");
    let scene: Value = resp.json().await.unwrap();
    assert_schema("scene", &scene);
    assert_eq!(scene["sources"], json!([]));

    let (status, body) = get(&r, "/v1/scene?lat=95&lon=7&heading=0", None).await;
    assert_eq!(status, 400);
    assert_schema("error", &body);
    assert_eq!(body["code"], "invalid_coordinates");

    let (status, body) = get(&r, "/v1/scene?lon=7", None).await;
    assert_eq!((status, body["code"].as_str()), (400, Some("malformed_request")));
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn species_zero_recording_lands_in_scene_east_of_listener() {
    let r = spawn(config()).await;
    let (status, body) = submit(&r, "tok-alice", call_wav(0, 11), &meta(here(), at(3, 6))).await;
    assert_eq!(status, 201, "{body:#}");
    assert_schema("recording-response", &body);
    assert_eq!(body["status"], "stored");
    assert_eq!(body["classification"]["ranking"][0]["species_id"], "synth-00");
    assert_eq!(body["reward"]["points_delta"], 10);

    let listener = here().destination(270.0, 150.0);
    let path = format!("/v1/scene?lat={}&lon={}&heading=0", listener.lat, listener.lon);
    let (_, scene) = get(&r, &path, None).await;
    assert_schema("scene", &scene);
    let sources = scene["sources"].as_array().unwrap();
    assert_eq!(sources.len(), 1);
    assert_eq!(sources[0]["species_id"], "synth-00");
    let azimuth = sources[0]["azimuth"].as_f64().unwrap();
    assert!((azimuth - 90.0).abs() < 0.5, "azimuth {azimuth}");

    // facing east puts it dead ahead
    let path = format!("/v1/scene?lat={}&lon={}&heading=90", listener.lat, listener.lon);
    let (_, scene) = get(&r, &path, None).await;
    assert!(scene["sources"][0]["azimuth"].as_f64().unwrap().abs() < 0.5);

    let (_, tile) = get(&r, "/v1/tiles/0/0/0", None).await;
    assert_schema("tile", &tile);
    assert_eq!(tile["total"], 1);
    assert_eq!(tile["counts"]["synth-00"], 1);
    let (_, tile) = get(&r, "/v1/tiles/0/0/0?species=synth-09", None).await;
    assert_eq!(tile["counts"], json!({}));
    let (_, layer) = get(&r, "/v1/tiles/14", None).await;
    assert_schema("tile-layer", &layer);
    assert_eq!(layer["tiles"].as_array().unwrap().len(), 1);

    let clip_ref = body["clip_ref"].as_str().unwrap();
    let resp = r.client.get(r.url(&format!("/v1/clips/{clip_ref}"))).bearer_auth("tok-bob").send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(resp.bytes().await.unwrap().as_ref(), call_wav(0, 11).as_slice());

    let (status, traj) = get(&r, "/v1/trajectory/synth-00?bucket_days=7", Some("tok-alice")).await;
    assert_eq!(status, 200);
    assert_schema("trajectory", &traj);
    assert_eq!(traj["points"].as_array().unwrap().len(), 1);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn resubmission_is_idempotent() {
    let r = spawn(config()).await;
    let m = meta(here(), at(3, 6));
    let (s1, first) = submit(&r, "tok-alice", call_wav(2, 5), &m).await;
    let (s2, second) = submit(&r, "tok-alice", call_wav(2, 5), &m).await;
    assert_eq!((s1, s2), (201, 200));
    assert_schema("recording-response", &second);
    assert_eq!(second["status"], "duplicate");
    assert_eq!(first["detection_id"], second["detection_id"]);
    assert_eq!(r.state.repo.len(), 1);
    let (_, profile) = get(&r, "/v1/profile", Some("tok-alice")).await;
    assert_eq!(profile["points"], 10);
    // another user uploading the same clip is a distinct observation
    let (s3, _) = submit(&r, "tok-bob", call_wav(2, 5), &m).await;
    assert_eq!(s3, 201);
    assert_eq!(r.state.repo.len(), 2);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn white_noise_is_rejected_without_storing() {
    let r = spawn(config()).await;
    let (status, body) = submit(&r, "tok-alice", noise_wav(3), &meta(here(), at(3, 6))).await;
    assert_eq!(status, 200, "{body:#}");
    assert_schema("recording-response", &body);
    assert_eq!(body["status"], "rejected_low_confidence");
    assert_eq!(body["detection_id"], Value::Null);
    assert!(body["classification"]["ranking"][0]["score"].as_f64().unwrap() < 0.65);
    assert_eq!(r.state.repo.len(), 0);
    let (_, profile) = get(&r, "/v1/profile", Some("tok-alice")).await;
    assert_eq!(profile["points"], 0);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_uploads_are_client_errors() {
    let r = spawn(config()).await;
    let good = call_wav(1, 1);
    let cases: Vec<(Vec<u8>, Value, &str)> = vec![
        (good[..good.len() / 2].to_vec(), meta(here(), at(3, 6)), "malformed_audio"),
        (good[..20].to_vec(), meta(here(), at(3, 6)), "malformed_audio"),
        (b"not a wav".to_vec(), meta(here(), at(3, 6)), "malformed_audio"),
        (good.clone(), json!({"annotation": {"start_s": 1.5, "end_s": 3.0}, "position": here(), "timestamp": at(3, 6), "mode": "service"}), "invalid_annotation"),
        (good.clone(), json!({"annotation": annotation(), "position": {"lat": 91.0, "lon": 0.0}, "timestamp": at(3, 6), "mode": "service"}), "invalid_coordinates"),
        (good.clone(), json!({"annotation": annotation(), "position": here(), "timestamp": at(3, 6), "mode": "on-edge"}), "malformed_request"),
        (good.clone(), json!({"annotation": annotation(), "position": here(), "mode": "service"}), "malformed_request"),
    ];
    for (audio, m, code) in cases {
        let (status, body) = submit(&r, "tok-alice", audio, &m).await;
        assert_eq!(status, 400, "{code}: {body:#}");
        assert_schema("error", &body);
        assert_eq!(body["code"], code);
        assert_eq!(body["retryable"], false);
    }
    // a timestamp far in the future is refused by the repository
    let future = Utc::now() + chrono::Duration::days(3);
    let (status, body) = submit(&r, "tok-alice", good, &meta(here(), future)).await;
    assert_eq!((status, body["code"].as_str()), (422, Some("rejected")));
    assert_eq!(r.state.repo.len(), 0);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn authentication_and_error_codes() {
    let r = spawn(config()).await;
    for path in ["/v1/profile", "/v1/quests", "/v1/species/synth-00/bank", "/v1/trajectory/synth-00"] {
        let (status, body) = get(&r, path, None).await;
        assert_eq!(status, 401, "{path}");
        assert_schema("error", &body);
        assert_eq!(body["code"], "unauthenticated");
        let (status, _) = get(&r, path, Some("wrong")).await;
        assert_eq!(status, 401);
    }
    let (status, body) = submit(&r, "nope", call_wav(0, 1), &meta(here(), at(3, 6))).await;
    assert_eq!((status, body["code"].as_str()), (401, Some("unauthenticated")));

    let (status, body) = get(&r, "/v1/species/synth-00/bank", Some("tok-alice")).await;
    assert_eq!(status, 403);
    assert_schema("error", &body);
    assert_eq!(body["code"], "badge_required");

    let (status, body) = post(&r, "/v1/quests/no-such-quest/accept", Some("tok-alice")).await;
    assert_eq!((status, body["code"].as_str()), (404, Some("not_found")));
    let (status, body) = post(&r, "/v1/quests/dawn-chorus/accept", Some("tok-alice")).await;
    assert_eq!((status, body["code"].as_str()), (409, Some("quest_locked")));
    let (status, body) = get(&r, "/v1/nothing-here", None).await;
    assert_eq!((status, body["code"].as_str()), (404, Some("not_found")));
    let (status, body) = get(&r, "/v1/tiles/3/8/0", None).await;
    assert_eq!((status, body["code"].as_str()), (400, Some("tile_out_of_range")));
    let (status, body) = get(&r, "/v1/tiles/19/0/0", None).await;
    assert_eq!((status, body["code"].as_str()), (400, Some("tile_out_of_range")));
    let (status, body) = get(&r, "/v1/tiles/0/0/0?from=2025-06-01T00:00:00Z&to=2025-01-01T00:00:00Z", None).await;
    assert_eq!((status, body["code"].as_str()), (400, Some("invalid_range")));
    let (status, body) = get(&r, "/v1/clips/abc", Some("tok-alice")).await;
    assert_eq!((status, body["code"].as_str()), (404, Some("not_found")));
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn accept_submit_profile() {
    let r = spawn(config()).await;
    let (status, fresh) = get(&r, "/v1/profile", Some("tok-carol")).await;
    assert_eq!(status, 200);
    assert_schema("profile", &fresh);
    assert_eq!(fresh["points"], 0);
    assert_eq!(fresh["user_id"], "carol");

    let (_, quests) = get(&r, "/v1/quests", Some("tok-carol")).await;
    assert_schema("quests", &quests);
    let ids: Vec<&str> = quests["quests"].as_array().unwrap().iter().map(|q| q["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["first-call", "pair-up"]);

    let (status, profile) = post(&r, "/v1/quests/first-call/accept", Some("tok-carol")).await;
    assert_eq!(status, 200);
    assert_schema("profile", &profile);
    assert!(profile["active_quests"]["first-call"].is_object());
    let (status, body) = post(&r, "/v1/quests/first-call/accept", Some("tok-carol")).await;
    assert_eq!((status, body["code"].as_str()), (409, Some("quest_already_active")));

    let (status, body) = submit(&r, "tok-carol", call_wav(0, 77), &meta(here(), Utc::now())).await;
    assert_eq!(status, 201, "{body:#}");
    assert_eq!(body["reward"]["points_delta"], 30);
    assert_eq!(body["reward"]["quests_completed"], json!(["first-call"]));

    let (_, profile) = get(&r, "/v1/profile", Some("tok-carol")).await;
    assert_schema("profile", &profile);
    assert_eq!(profile["points"], 30);
    assert_eq!(profile["completed_quests"], json!(["first-call"]));
    assert_eq!(profile["species_seen"], json!(["synth-00"]));
    let (_, quests) = get(&r, "/v1/quests", Some("tok-carol")).await;
    assert_eq!(quests["quests"][0]["state"], "completed");
    let (status, body) = post(&r, "/v1/quests/first-call/accept", Some("tok-carol")).await;
    assert_eq!((status, body["code"].as_str()), (409, Some("quest_already_completed")));

    // the event log replays to the served profile
    let api: aviscape_core::game::UserProfile = serde_json::from_value(profile).unwrap();
    let replayed = aviscape_core::game::UserProfile::replay("carol", &r.state.game.events("carol").unwrap());
    assert_eq!(api, replayed);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn bank_opens_with_the_badge() {
    let r = spawn(config()).await;
    for i in 0..10u64 {
        let (status, _) = submit(&r, "tok-dave", call_wav((i % 3) as usize, 300 + i), &meta(here(), at(4, 1 + i as u32))).await;
        assert_eq!(status, 201);
    }
    let (_, profile) = get(&r, "/v1/profile", Some("tok-dave")).await;
    assert_eq!(profile["bank_unlocked"], true);
    let (status, bank) = get(&r, "/v1/species/synth-01/bank", Some("tok-dave")).await;
    assert_eq!(status, 200);
    assert_schema("bank", &bank);
    assert_eq!(bank["clips"].as_array().unwrap().len(), 3);
    let (status, _) = get(&r, "/v1/species/synth-01/bank", Some("tok-alice")).await;
    assert_eq!(status, 403);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_clients_union() {
    let r = spawn(config()).await;
    let state = r.state.clone();
    let r = std::sync::Arc::new(r);
    let mut tasks = Vec::new();
    for (ci, (token, user)) in TOKENS.iter().enumerate() {
        for k in 0..4u64 {
            let r = r.clone();
            tasks.push(tokio::spawn(async move {
                let audio = call_wav((k as usize + ci) % 4, 1000 + ci as u64 * 10 + k);
                let clip_ref = ClipRef::for_bytes(&audio);
                let (status, body) = submit(&r, token, audio, &meta(here().destination(90.0, k as f64 * 50.0), at(5, 8))).await;
                assert_eq!(status, 201, "{body:#}");
                let expected = Detection::derive_id(user, &clip_ref, &annotation());
                assert_eq!(body["detection_id"], json!(expected));
                expected
            }));
        }
    }
    let mut expected = BTreeSet::new();
    for t in tasks {
        expected.insert(t.await.unwrap());
    }
    let stored: BTreeSet<DetectionId> = state.repo.all().into_iter().map(|d| d.id).collect();
    assert_eq!(stored, expected);
    assert_eq!(stored.len(), 16);
    for (_, user) in TOKENS {
        assert_eq!(state.game.profile(user, Utc::now()).unwrap().points, 40);
    }
}

/// Every request sequence leaves the API-side state equal to the state of
/// the modules driven directly with the same inputs.
#[tokio::test(flavor = "multi_thread")]
async fn api_is_a_projection_of_the_modules() {
    let r = spawn(config()).await;
    let repo = Repository::in_memory(r.state.config.repo_config());
    let game = GameEngine::in_memory(RuleBook::default());
    for (_, u) in TOKENS {
        game.register(u).unwrap();
    }

    let steps: Vec<(&str, &str, usize, u64, GeoPoint, u32)> = vec![
        ("tok-alice", "alice", 0, 1, here(), 1),
        ("tok-alice", "alice", 1, 2, here().destination(10.0, 300.0), 2),
        ("tok-bob", "bob", 1, 2, here().destination(10.0, 300.0), 2),
        ("tok-bob", "bob", 5, 3, GeoPoint::new(-33.9, 18.4).unwrap(), 3),
        ("tok-alice", "alice", 0, 1, here(), 1),
        ("tok-carol", "carol", 9, 4, GeoPoint::new(0.0, 179.99).unwrap(), 4),
    ];
    for (token, user, species, seed, pos, day) in steps {
        let audio = call_wav(species, seed);
        let m = meta(pos, at(day, 7));
        let (status, body) = submit(&r, token, audio.clone(), &m).await;

        let clip = decode(&audio);
        let excerpt = clip.excerpt(&annotation()).unwrap();
        let result = r.state.recognizer.recognize(&excerpt, RecognitionMode::Service).unwrap();
        assert_eq!(body["classification"], serde_json::to_value(&result).unwrap());
        let top = result.top().unwrap().clone();
        assert!(top.score >= 0.65);
        let clip_ref = repo.clips().put(&audio).unwrap();
        let d = Detection {
            id: Detection::derive_id(user, &clip_ref, &annotation()),
            species_id: top.species_id,
            confidence: top.score,
            timestamp: at(day, 7),
            geo: pos,
            annotation: annotation(),
            clip_ref,
            submitter: user.into(),
        };
        let outcome = repo.insert(d.clone()).unwrap();
        if outcome.created {
            assert_eq!(status, 201);
            let reward = game.record_submission(user, &Submission::from(&d)).unwrap();
            assert_eq!(body["reward"], serde_json::to_value(&reward).unwrap());
        } else {
            assert_eq!(status, 200);
        }
    }

    let mut api_all = r.state.repo.all();
    let mut direct_all = repo.all();
    api_all.sort_by(|a, b| a.id.cmp(&b.id));
    direct_all.sort_by(|a, b| a.id.cmp(&b.id));
    assert_eq!(api_all, direct_all);

    let now = Utc::now();
    for (token, user) in TOKENS {
        let (_, p) = get(&r, "/v1/profile", Some(token)).await;
        assert_eq!(p, serde_json::to_value(game.profile(user, now).unwrap()).unwrap());
    }
    for z in 0..=14u8 {
        let (_, layer) = get(&r, &format!("/v1/tiles/{z}"), None).await;
        let direct = repo.tile_counts(z, &BBox::globe(), &TimeRange::all(), None).unwrap();
        let tiles: Vec<Value> = direct.iter().map(|(t, n)| json!({"zoom": t.zoom, "x": t.x, "y": t.y, "count": n})).collect();
        assert_eq!(layer["tiles"], json!(tiles), "zoom {z}");
    }
    let (_, scene) = get(&r, "/v1/scene?lat=45.0705&lon=7.6795&heading=33", None).await;
    let request = SceneRequest {
        position: GeoPoint::new(45.0705, 7.6795).unwrap(),
        heading: 33.0,
        time_window: TimeRange::all(),
        species: None,
    };
    let direct = build_scene(&request, &repo, &r.state.config.scene, now).unwrap();
    assert_eq!(scene["sources"], serde_json::to_value(&direct.sources).unwrap());
    assert_eq!(direct.sources.len(), 2);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn recognize_endpoint_speaks_the_contract() {
    let r = spawn(config()).await;
    let clip = decode(&call_wav(4, 8));
    let mel = r.state.recognizer.classifier().features(&clip).unwrap();
    let request = ServiceRequest::encode(&mel, InferenceMode::FrameWise);
    let body = serde_json::to_value(&request).unwrap();
    assert_schema("recognize-request", &body);
    let resp = r.client.post(r.url("/v1/recognize")).json(&body).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    let answer: Value = resp.json().await.unwrap();
    assert_schema("recognize-response", &answer);
    assert_eq!(answer["ranking"][0]["species_id"], "synth-04");
    assert!(answer["frame_scores"]["rows"].as_array().unwrap().len() > 1);

    let mut bad = request.clone();
    bad.frames += 1;
    let resp = r.client.post(r.url("/v1/recognize")).json(&bad).send().await.unwrap();
    assert_eq!(resp.status(), 400);
    let resp = r.client.post(r.url("/v1/recognize")).body("{").send().await.unwrap();
    assert_eq!(resp.status(), 400);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn service_mode_uses_remote_endpoint_then_falls_back() {
    let remote = spawn(config()).await;
    let mut c = config();
    c.recognition_endpoint = Some(remote.base.clone());
    c.recognition_fallback = false;
    let front = spawn(c).await;
    let (status, body) = submit(&front, "tok-alice", call_wav(6, 2), &meta(here(), at(6, 6))).await;
    assert_eq!(status, 201, "{body:#}");
    assert_eq!(body["classification"]["fallback"], false);
    assert_eq!(body["classification"]["ranking"][0]["species_id"], "synth-06");
    // the remote never stores anything itself
    assert_eq!(remote.state.repo.len(), 0);
    front.stop().await;

    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let mut c = config();
    c.recognition_endpoint = Some(dead.clone());
    c.recognition_timeout_ms = 500;
    let lenient = spawn(c).await;
    let (status, body) = submit(&lenient, "tok-alice", call_wav(6, 2), &meta(here(), at(6, 6))).await;
    assert_eq!(status, 201);
    assert_eq!(body["classification"]["fallback"], true);
    assert_eq!(body["classification"]["ranking"][0]["species_id"], "synth-06");
    lenient.stop().await;

    let mut c = config();
    c.recognition_endpoint = Some(dead);
    c.recognition_timeout_ms = 500;
    c.recognition_fallback = false;
    let strict = spawn(c).await;
    let (status, body) = submit(&strict, "tok-alice", call_wav(6, 2), &meta(here(), at(6, 6))).await;
    assert_eq!(status, 503);
    assert_schema("error", &body);
    assert_eq!(body["code"], "recognition_unavailable");
    assert_eq!(body["retryable"], true);
    assert_eq!(strict.state.repo.len(), 0);
    strict.stop().await;
    remote.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn on_edge_mode_trusts_a_valid_client_result() {
    let r = spawn(config()).await;
    let clip = decode(&call_wav(3, 9));
    let result = r.state.recognizer.recognize(&clip.excerpt(&annotation()).unwrap(), RecognitionMode::OnEdge).unwrap();
    let mut m = meta(here(), at(7, 7));
    m["mode"] = json!("on-edge");
    m["classification"] = serde_json::to_value(&result).unwrap();
    assert_schema("recording-meta", &m);
    let (status, body) = submit(&r, "tok-bob", call_wav(3, 9), &m).await;
    assert_eq!(status, 201, "{body:#}");
    assert_eq!(body["classification"], m["classification"]);

    let mut unsorted = m.clone();
    unsorted["classification"]["ranking"].as_array_mut().unwrap().reverse();
    let (status, body) = submit(&r, "tok-bob", call_wav(3, 10), &unsorted).await;
    assert_eq!((status, body["code"].as_str()), (400, Some("malformed_request")));
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config();
    c.data_dir = Some(dir.path().to_path_buf());
    let r = spawn(c.clone()).await;
    submit(&r, "tok-alice", call_wav(0, 1), &meta(here(), at(2, 2))).await;
    submit(&r, "tok-bob", call_wav(1, 1), &meta(here(), at(2, 3))).await;
    let before = r.state.repo.all();
    let (_, profile_before) = get(&r, "/v1/profile", Some("tok-alice")).await;
    r.stop().await;
    assert!(dir.path().join("snapshot.json").exists());
    assert!(dir.path().join("templates.json").exists());

    let r = spawn(c).await;
    assert_eq!(r.state.repo.all(), before);
    let (_, profile_after) = get(&r, "/v1/profile", Some("tok-alice")).await;
    assert_eq!(profile_before, profile_after);
    r.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn bind_conflict_is_reported() {
    let r = spawn(config()).await;
    let addr = r.base.trim_start_matches("http://").parse().unwrap();
    let err = aviscape_server::Server::bind(ServerConfig { bind: addr, ..config() }).await.err().unwrap();
    assert!(matches!(err, aviscape_server::StartupError::Bind { .. }), "{err}");
    r.stop().await;
}
