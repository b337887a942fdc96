use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;

use serde_json::{json, Value};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synthetic() -> String {
    format!("file={}", root().join("fixtures/synthetic.jsonl").display())
}

fn synthetic_backend() -> String {
    format!("fixture={}", root().join("fixtures/synthetic.logprobs.jsonl").display())
}

fn mcq_eval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcq-eval"))
        .args(args)
        .env_remove("MCQ_EVAL_DATA_ROOT")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn prompt_lines(out: &Output) -> Vec<Value> {
    stdout(out).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

/// Serves health checks and scores every continuation as one token with
/// logprob -len(continuation)/10.
fn fake_server(models: &[&str]) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let models: Vec<String> = models.iter().map(|m| m.to_string()).collect();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let reply = if request_line.starts_with("GET /v1/health") {
                json!({"status": "ok", "models": models})
            } else {
                let q: Value = serde_json::from_slice(&body).unwrap();
                let cont = q["continuation"].as_str().unwrap();
                json!({"tokens": [cont], "logprobs": [-(cont.len() as f64) / 10.0]})
            }
            .to_string();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    url
}

fn write_fixture(dir: &Path, records: &[Value]) -> String {
    let path = dir.join("fx.jsonl");
    let body: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(&path, body).unwrap();
    format!("fixture={}", path.display())
}

#[test]
fn print_prompts_pe_exact() {
    let out = mcq_eval(&["print-prompts", "--dataset", &synthetic(), "--method", "pe", "--n", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ctx = "Given answers in square brackets [], choose the one that best completes the sentence. \
               Answers: [he slipped., he sang.]. Sentence: The man fell. This happened because The best answer is:";
    let want = [
        json!({"item": "syn-1", "option": 0, "role": "numerator", "context": ctx, "continuation": " he slipped."}),
        json!({"item": "syn-1", "option": 1, "role": "numerator", "context": ctx, "continuation": " he sang."}),
    ];
    assert_eq!(prompt_lines(&out), want);
}

#[test]
fn print_prompts_question_style() {
    let out = mcq_eval(&["print-prompts", "--dataset", &synthetic(), "--method", "pe", "--n", "2"]);
    let lines = prompt_lines(&out);
    let siqa: Vec<&Value> = lines.iter().filter(|l| l["item"] == "syn-2").collect();
    assert_eq!(siqa.len(), 3);
    let ctx = siqa[0]["context"].as_str().unwrap();
    assert!(ctx.starts_with("Given answers in square brackets [], choose the best for the question."));
    assert!(ctx.contains("Answers: [hungry, full, sleepy]. Question: Tracy skipped lunch."));
    assert!(ctx.ends_with("The best answer is:"));
}

#[test]
fn full_denominators_omit_the_question() {
    let out = mcq_eval(&["print-prompts", "--dataset", &synthetic(), "--method", "full", "--n", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines = prompt_lines(&out);
    let denominators: Vec<&Value> = lines.iter().filter(|l| l["role"] == "denominator").collect();
    assert_eq!(denominators.len(), 2 + 3 + 2);
    for d in denominators {
        let ctx = d["context"].as_str().unwrap();
        assert!(ctx.starts_with("Given answers in square brackets [], choose the best one. Answers: ["), "{ctx}");
        for stem in ["The man fell", "Tracy skipped lunch", "To dry wet hands"] {
            assert!(!ctx.contains(stem), "{ctx}");
        }
    }
}

#[test]
fn print_prompts_is_deterministic() {
    let args = ["print-prompts", "--dataset", &synthetic(), "--method", "ca", "--n", "3"];
    let a = mcq_eval(&args);
    let b = mcq_eval(&args);
    assert_eq!(code(&a), 0);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn print_prompts_bad_method() {
    let out = mcq_eval(&["print-prompts", "--dataset", &synthetic(), "--method", "pmi"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn score_one_zs_and_ca() {
    let dir = tempfile::tempdir().unwrap();
    let backend = write_fixture(
        dir.path(),
        &[
            json!({"model": "m", "context": "The sky is", "continuation": " blue", "tokens": [" blue"], "logprobs": [-2.0]}),
            json!({"model": "m", "context": "The sky is", "continuation": " green", "tokens": [" green"], "logprobs": [-3.0]}),
            json!({"model": "m", "context": "", "continuation": " blue", "tokens": [" blue"], "logprobs": [-4.0]}),
            json!({"model": "m", "context": "", "continuation": " green", "tokens": [" green"], "logprobs": [-4.0]}),
        ],
    );
    let base = ["score-one", "--model", "m", "--backend", &backend, "--dataset", "csqa", "--stem", "The sky is"];
    let opts = ["--option", "blue", "--option", "green"];

    let zs = mcq_eval(&[&base[..], &opts, &["--method", "zs"]].concat());
    assert_eq!(code(&zs), 0, "{}", stderr(&zs));
    let zs: Value = serde_json::from_slice(&zs.stdout).unwrap();
    assert_eq!(zs["pred"], 0);
    assert_eq!(zs["options"][0]["raw"], -2.0);
    assert_eq!(zs["options"][1]["final"], -3.0);
    assert_eq!(zs["options"][0]["null"], Value::Null);

    let ca = mcq_eval(&[&base[..], &opts, &["--method", "ca"]].concat());
    assert_eq!(code(&ca), 0, "{}", stderr(&ca));
    let ca: Value = serde_json::from_slice(&ca.stdout).unwrap();
    assert_eq!(ca["pred"], zs["pred"]);
    assert_eq!(ca["options"][0]["null"], -4.0);
    assert_eq!(ca["options"][0]["final"], 2.0);
}

#[test]
fn score_one_single_option() {
    let dir = tempfile::tempdir().unwrap();
    let backend = write_fixture(dir.path(), &[]);
    let out = mcq_eval(&[
        "score-one", "--model", "m", "--backend", &backend, "--dataset", "piqa", "--stem", "x", "--option", "only",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn score_one_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    let backend = write_fixture(dir.path(), &[]);
    let out = mcq_eval(&[
        "score-one", "--model", "m", "--backend", &backend, "--dataset", "piqa", "--stem", "x", "--option", "a",
        "--option", "b",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));

    let out = mcq_eval(&[
        "score-one", "--model", "m", "--backend", "http=http://127.0.0.1:9", "--dataset", "piqa", "--stem", "x",
        "--option", "a", "--option", "b",
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn run_on_synthetic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = mcq_eval(&[
            "run", "--model", "toy-lm", "--method", "zs,ca", "--dataset", &synthetic(), "--backend",
            &synthetic_backend(), "--out", out_dir.to_str().unwrap(), "--concurrency", "3",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(out_dir);
    }
    let csv = fs::read_to_string(outputs[0].join("results.csv")).unwrap();
    assert_eq!(
        csv,
        "model,dataset,method,accuracy,item_count\n\
         toy-lm,synthetic,ZS,0.6666666666666666,3\n\
         toy-lm,synthetic,CA,0.6666666666666666,3\n"
    );
    for file in ["results.csv", "report.md", "predictions/toy-lm__synthetic__ca.jsonl"] {
        assert_eq!(fs::read(outputs[0].join(file)).unwrap(), fs::read(outputs[1].join(file)).unwrap(), "{file}");
    }

    let report = mcq_eval(&["report", outputs[0].to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    assert_eq!(stdout(&report), fs::read_to_string(outputs[0].join("report.md")).unwrap());
}

#[test]
fn run_against_http_server() {
    let url = fake_server(&["gpt2-small"]);
    let dir = tempfile::tempdir().unwrap();
    let out = mcq_eval(&[
        "run", "--model", "gpt2-small", "--method", "zs,ca", "--dataset", &synthetic(), "--backend",
        &format!("http={url}"), "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
}

#[test]
fn run_with_model_the_server_lacks() {
    let url = fake_server(&["gpt2-small"]);
    let dir = tempfile::tempdir().unwrap();
    let out = mcq_eval(&[
        "run", "--model", "flan-t5-small", "--method", "zs", "--dataset", &synthetic(), "--backend",
        &format!("http={url}"), "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn run_missing_model() {
    let out = mcq_eval(&["run", "--method", "zs", "--dataset", &synthetic(), "--backend", &synthetic_backend()]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("--model"), "{err}");
    assert!(err.contains("Usage:"), "{err}");
}

#[test]
fn run_unknown_flag() {
    let out = mcq_eval(&["run", "--model", "m", "--temperature", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn run_unreachable_backend() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcq_eval(&[
        "run", "--model", "toy-lm", "--method", "zs", "--dataset", &synthetic(), "--backend",
        "http=http://127.0.0.1:9", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn run_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcq_eval(&[
        "run", "--model", "toy-lm", "--method", "zs,pe", "--dataset", &synthetic(), "--backend",
        &synthetic_backend(), "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(dir.path().join("failures.json").is_file());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.contains("toy-lm,synthetic,ZS,"));
    assert!(!csv.contains(",PE,"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "model = \"toy-lm\"\nmethod = [\"zs\"]\ndataset = [{:?}]\nbackend = {:?}\nout = {:?}\n",
            synthetic(),
            synthetic_backend(),
            dir.path().join("from-file").display().to_string()
        ),
    )
    .unwrap();
    let flagged = dir.path().join("from-flag");
    let out = mcq_eval(&["run", "--config", config.to_str().unwrap(), "--method", "ca", "--out", flagged.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(!dir.path().join("from-file").exists());
    let csv = fs::read_to_string(flagged.join("results.csv")).unwrap();
    assert!(csv.contains("toy-lm,synthetic,CA,"), "{csv}");
    assert!(!csv.contains(",ZS,"));

    fs::write(&config, "model = \"toy-lm\"\ntemperature = 0\n").unwrap();
    let out = mcq_eval(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_official_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = mcq_eval(&["print-prompts", "--dataset", "copa", "--method", "zs", "--data-root", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
