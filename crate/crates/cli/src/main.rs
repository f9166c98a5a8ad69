//! `wban`: synthesise, analyse, transmit and monitor ECG/EEG signals.

mod analyze;
mod signal_file;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand};
use std::io::Write;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use wban_core::channel::ChannelModel;
use wban_core::config::DspConfig;
use wban_core::dsp::{FilterKind, FilterSpec};
use wban_core::signal::{synth_ecg, synth_eeg, EcgMorphology, Lead, LeadConfig, NoiseSpec};
use wban_core::wire::encode_frame;
use wban_monitor::config::{ServiceConfig, SignalKind};
use wban_monitor::rules::{AlertEvent, AlertRule, Comparator, Metric, MetricValue, Threshold};
use wban_monitor::sms::{
    format_message, send, DeviceTransport, MockTransport, ModemTransport, SendOptions,
};

use signal_file::Signal;

#[derive(Parser)]
#[command(name = "wban", version, about = "Body-area-network ECG/EEG toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ECG or EEG file (.csv or .banrec).
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// Report heart rate, wave amplitudes, EEG band and SNR for a file.
    Analyze {
        input: PathBuf,
        /// Signal kind; read from recordings, otherwise guessed from amplitude.
        #[arg(long)]
        kind: Option<SignalKind>,
        /// Clean signal of the same length for SNR.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Design a FIR filter and print its properties.
    FilterDesign {
        /// low_pass, high_pass or band_pass.
        #[arg(long)]
        kind: FilterKind,
        /// Cutoff in Hz (lower edge for band-pass).
        #[arg(long)]
        cutoff: f64,
        /// Upper edge in Hz, band-pass only.
        #[arg(long)]
        cutoff_hi: Option<f64>,
        #[arg(long, default_value_t = 101)]
        taps: usize,
        #[arg(long, default_value_t = 250.0)]
        fs: f64,
        /// Frequencies (Hz) at which to report the magnitude response.
        #[arg(long, value_delimiter = ',')]
        at: Vec<f64>,
        /// Also print the coefficients.
        #[arg(long)]
        coefficients: bool,
        #[arg(long)]
        json: bool,
    },
    /// Pass a file through the RF channel model.
    Channel {
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// identity, default, or a preset from --config.
        #[arg(long, default_value = "default")]
        preset: String,
        /// TOML file with [channel.<name>] presets.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the channel noise seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Send a file to a running service over the telemetry protocol.
    Stream {
        input: PathBuf,
        /// host:port of the telemetry listener.
        #[arg(long)]
        to: String,
        /// Playback speed multiplier; 0 sends as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Channel id for CSV input.
        #[arg(long)]
        channel: Option<u8>,
    },
    /// Run the monitor service.
    Serve {
        #[arg(long, env = "WBAN_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, env = "WBAN_TELEMETRY_ADDR")]
        telemetry: Option<String>,
        #[arg(long, env = "WBAN_API_ADDR")]
        api: Option<String>,
        #[arg(long, env = "WBAN_RECORDINGS")]
        recordings: Option<PathBuf>,
    },
    /// Send one sample alert through the modem and print the exchange.
    SendTestSms {
        /// Use the scripted modem instead of a device.
        #[arg(long, conflicts_with = "device")]
        mock: bool,
        /// Serial device of the modem.
        #[arg(long, env = "WBAN_MODEM")]
        device: Option<PathBuf>,
        #[arg(long, default_value = "+60123456789")]
        to: String,
        #[arg(long, default_value = "HR ALERT ch{channel} {value}BPM")]
        template: String,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
}

#[derive(Subcommand)]
enum SynthKind {
    Ecg {
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
        lead: u8,
        #[arg(long, default_value_t = 72.0)]
        hr: f64,
        #[command(flatten)]
        common: SynthArgs,
        /// Floating third electrode (raises the noise floor).
        #[arg(long)]
        ungrounded: bool,
    },
    Eeg {
        /// Dominant frequency, Hz.
        #[arg(long, default_value_t = 10.0)]
        freq: f64,
        /// Amplitude, mV.
        #[arg(long, default_value_t = 0.05)]
        amp: f64,
        #[command(flatten)]
        common: SynthArgs,
    },
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    /// Sample rate; 250 Hz for ECG and 256 Hz for EEG when omitted.
    #[arg(long)]
    fs: Option<f64>,
    /// Broadband noise std, mV.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    channel: u8,
    #[arg(long, short)]
    out: PathBuf,
}

fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::InvalidValue, msg)
        .exit()
}

fn synth(kind: SynthKind) -> Result<()> {
    let (synth, sk, args) = match kind {
        SynthKind::Ecg {
            lead,
            hr,
            common,
            ungrounded,
        } => {
            let lead = Lead::from_number(lead).expect("range checked by clap");
            let mut cfg = LeadConfig::new(lead);
            if ungrounded {
                cfg = cfg.ungrounded();
            }
            let morph = EcgMorphology::for_lead(&cfg, hr)?;
            (
                synth_ecg(morph, cfg, common.fs.unwrap_or(250.0), common.seconds)?,
                SignalKind::Ecg,
                common,
            )
        }
        SynthKind::Eeg { freq, amp, common } => (
            synth_eeg(freq, amp, common.fs.unwrap_or(256.0), common.seconds)?,
            SignalKind::Eeg,
            common,
        ),
    };
    let synth = synth
        .with_noise(NoiseSpec::broadband(args.noise, args.seed))?
        .with_channel(args.channel);
    let rec = synth.record();
    let signal = Signal {
        channel_id: args.channel,
        kind: Some(sk),
        sample_rate: rec.sample_rate,
        samples: rec.samples,
    };
    signal_file::save(&args.out, &signal, sk)?;
    eprintln!(
        "wrote {} samples to {}",
        signal.samples.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_analyze(
    input: &Path,
    kind: Option<SignalKind>,
    reference: Option<&Path>,
    json: bool,
) -> Result<()> {
    let signal = signal_file::load(input)?;
    let kind = kind.unwrap_or_else(|| analyze::infer_kind(&signal));
    let reference = reference.map(signal_file::load).transpose()?;
    let report = analyze::analyze(&signal, kind, reference.as_ref())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn filter_design(
    kind: FilterKind,
    cutoff: f64,
    cutoff_hi: Option<f64>,
    taps: usize,
    fs: f64,
    at: Vec<f64>,
    coefficients: bool,
    json: bool,
) -> Result<()> {
    let spec = FilterSpec {
        kind,
        cutoff_lo: cutoff,
        cutoff_hi,
        taps,
        sample_rate: fs,
    };
    let filter = spec.design()?;
    let response: Vec<(f64, f64)> = at.iter().map(|&f| (f, filter.magnitude_db(f))).collect();
    let sum: f64 = filter.coefficients().iter().sum();
    if json {
        let v = serde_json::json!({
            "spec": spec,
            "config": spec.to_config_string(),
            "group_delay_s": filter.group_delay(),
            "coefficient_sum": sum,
            "response_db": response.iter().map(|(f, db)| serde_json::json!({"freq": f, "db": db})).collect::<Vec<_>>(),
            "coefficients": coefficients.then(|| filter.coefficients().to_vec()),
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }
    println!("{}", spec.to_config_string().trim_end());
    println!();
    println!(
        "group delay:  {:.6} s ({} samples)",
        filter.group_delay(),
        filter.delay_samples()
    );
    println!("coeff sum:    {sum:.9}");
    for (f, db) in response {
        println!("|H({f} Hz)|:  {db:.2} dB");
    }
    if coefficients {
        for c in filter.coefficients() {
            println!("{c:.12e}");
        }
    }
    Ok(())
}

fn channel(
    input: &Path,
    out: &Path,
    preset: &str,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let dsp = match config {
        Some(p) => DspConfig::parse(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => DspConfig::default(),
    };
    let mut model: ChannelModel = dsp
        .channel_preset(preset)
        .unwrap_or_else(|| usage_error(format!("unknown channel preset '{preset}'")));
    if let Some(s) = seed {
        model.noise.seed = s;
    }
    let signal = signal_file::load(input)?;
    let kind = analyze::infer_kind(&signal);
    let output = model.transmit_record(&signal.frame()?)?;
    signal_file::save(
        out,
        &Signal {
            samples: output.samples,
            ..signal
        },
        kind,
    )?;
    Ok(())
}

fn stream(input: &Path, to: &str, speed: f64, channel: Option<u8>) -> Result<()> {
    if !(speed.is_finite() && speed >= 0.0) {
        usage_error("--speed must be >= 0");
    }
    let mut signal = signal_file::load(input)?;
    if let Some(c) = channel {
        signal.channel_id = c;
    }
    let frames = signal.frames()?;
    let mut sock = TcpStream::connect(to).with_context(|| format!("connecting to {to}"))?;
    let start = Instant::now();
    let mut sent = 0.0;
    for f in &frames {
        sock.write_all(&encode_frame(f)?)?;
        sent += f.duration();
        if speed > 0.0 {
            let due = Duration::from_secs_f64(sent / speed);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    sock.flush()?;
    sock.shutdown(std::net::Shutdown::Write)?;
    eprintln!(
        "sent {} frames ({:.1} s of signal) to {to}",
        frames.len(),
        sent
    );
    Ok(())
}

fn serve(
    config: Option<PathBuf>,
    telemetry: Option<String>,
    api: Option<String>,
    recordings: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = match &config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(a) = telemetry {
        cfg.service.telemetry_addr = a;
    }
    if let Some(a) = api {
        cfg.service.api_addr = a;
    }
    if let Some(d) = recordings {
        cfg.service.recordings_dir = Some(d);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let handle = wban_monitor::start(cfg).await?;
        println!("telemetry listening on {}", handle.telemetry_addr);
        println!("api listening on http://{}", handle.api_addr);
        std::io::stdout().flush()?;
        tokio::signal::ctrl_c().await?;
        log::info!("shutting down");
        handle.shutdown().await;
        Ok(())
    })
}

fn send_test_sms(
    mock: bool,
    device: Option<PathBuf>,
    to: String,
    template: String,
    timeout_ms: u64,
) -> Result<()> {
    let rule = AlertRule {
        id: "test".into(),
        channel_id: 1,
        metric: Metric::HeartRate,
        comparator: Comparator::Gt,
        threshold: Threshold::Number(120.0),
        debounce: 0.0,
        message_template: template,
        recipient: Some(to),
    };
    rule.validate()?;
    let event = AlertEvent {
        id: 0,
        rule_id: rule.id.clone(),
        channel_id: 1,
        time: 0.0,
        value: MetricValue::Number(130.0),
        acknowledged: false,
    };
    let msg = format_message(&event, &rule, None)?;
    let opts = SendOptions {
        timeout: Duration::from_millis(timeout_ms),
        ..SendOptions::default()
    };
    let (mut transport, transcript): (Box<dyn ModemTransport>, _) = match (mock, device) {
        (true, _) => {
            let m = MockTransport::happy();
            let t = m.transcript();
            (Box::new(m), Some(t))
        }
        (false, Some(p)) => (
            Box::new(
                DeviceTransport::open(&p).with_context(|| format!("opening {}", p.display()))?,
            ),
            None,
        ),
        (false, None) => usage_error("pass --mock or --device <PATH>"),
    };
    let result = send(transport.as_mut(), &msg, opts);
    if let Some(t) = transcript {
        print!("{}", t.render());
    }
    match result {
        Ok(d) => {
            println!(
                "sent in {} attempt(s), reference {}",
                d.attempts,
                d.reference.map_or("none".into(), |r| r.to_string())
            );
            Ok(())
        }
        Err(e) => bail!(e),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { kind } => synth(kind),
        Cmd::Analyze {
            input,
            kind,
            reference,
            json,
        } => cmd_analyze(&input, kind, reference.as_deref(), json),
        Cmd::FilterDesign {
            kind,
            cutoff,
            cutoff_hi,
            taps,
            fs,
            at,
            coefficients,
            json,
        } => filter_design(kind, cutoff, cutoff_hi, taps, fs, at, coefficients, json),
        Cmd::Channel {
            input,
            out,
            preset,
            config,
            seed,
        } => channel(&input, &out, &preset, config.as_deref(), seed),
        Cmd::Stream {
            input,
            to,
            speed,
            channel,
        } => stream(&input, &to, speed, channel),
        Cmd::Serve {
            config,
            telemetry,
            api,
            recordings,
        } => serve(config, telemetry, api, recordings),
        Cmd::SendTestSms {
            mock,
            device,
            to,
            template,
            timeout_ms,
        } => send_test_sms(mock, device, to, template, timeout_ms),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.cmd, Cmd::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
