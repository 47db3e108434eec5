//! `schema` command-line client. Each command is a thin sequence of API calls.
//!
//! Exit codes: 0 success, 1 usage or validation, 2 authentication or
//! authorization, 3 not found, 4 quota exceeded, 5 server or transport.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand, ValueEnum};
use schema_core::{Definition, ExecutionKind, ExecutionRecord, ExecutionSummary, TaskRequest};
use serde::Serialize;
use serde_json::Value;
use uuid::Uuid;

use crate::client::{Client, ClientError};
use crate::executions::LogChannel;
use crate::experiments::NewExperiment;

#[derive(Debug, Parser)]
#[command(name = "schema", version, about = "Client for the execution gateway")]
pub struct Cli {
    #[arg(long, env = "SCHEMA_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
    #[arg(long, env = "SCHEMA_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Print raw response bodies.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Task,
    Workflow,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Submit a task from a JSON file.
    SubmitTask { file: PathBuf },
    /// Submit a workflow from a JSON file.
    SubmitWorkflow { file: PathBuf },
    /// List executions, newest first.
    List {
        #[arg(long, value_enum, default_value = "all")]
        kind: KindArg,
        #[arg(long)]
        status: Option<String>,
        #[arg(long)]
        page: Option<u32>,
        #[arg(long)]
        page_size: Option<u32>,
    },
    /// Show an execution's status.
    Status {
        uuid: Uuid,
        /// Poll until the execution is terminal.
        #[arg(long)]
        watch: bool,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
        /// Give up watching after this many seconds.
        #[arg(long)]
        timeout_secs: Option<u64>,
    },
    /// Print captured output, executors concatenated in order.
    Logs {
        uuid: Uuid,
        #[arg(long)]
        stderr: bool,
    },
    Cancel { uuid: Uuid },
    /// Submit a fresh copy of an execution's definition.
    Resubmit { uuid: Uuid },
    Quotas,
    #[command(subcommand)]
    Files(FilesCommand),
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Subcommand)]
pub enum FilesCommand {
    Ls { prefix: Option<String> },
    /// Upload a local file to a key.
    Put { local: PathBuf, key: String },
    /// Download a key to a local file, or to stdout with `-` or no path.
    Get { key: String, local: Option<PathBuf> },
    Mv {
        from: String,
        to: String,
        #[arg(long)]
        overwrite: bool,
    },
    Rm { key: String },
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    Create {
        name: String,
        #[arg(long)]
        description: Option<String>,
        #[arg(long = "participant")]
        participants: Vec<String>,
        /// Executions to assign right after creation.
        #[arg(long = "task")]
        tasks: Vec<Uuid>,
    },
    List,
    Show { owner: String, name: String },
    Assign { owner: String, name: String, tasks: Vec<Uuid> },
    Delete { owner: String, name: String },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Client(ClientError::Api(e)) => match e.status_code {
                401 | 403 => 2,
                404 => 3,
                429 => 4,
                400..=499 => 1,
                _ => 5,
            },
            CliError::Client(_) => 5,
        }
    }
}

type CliResult = Result<(), CliError>;

fn summary_line(s: &ExecutionSummary) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        s.uuid,
        s.kind.as_str(),
        s.status.as_str(),
        s.submitted_at.to_rfc3339(),
        s.name.as_deref().unwrap_or("-")
    )
}

fn limit<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "unlimited".to_string(), |v| v.to_string())
}

fn record_line(r: &ExecutionRecord) -> String {
    let mut line = format!("{}\t{}\t{}", r.uuid, r.kind.as_str(), r.status.as_str());
    if let Some(e) = &r.error {
        line.push_str(&format!("\t{}: {}", e.code, e.message));
    }
    line
}

struct Ctx<'a> {
    client: Client,
    json: bool,
    out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit<T: Serialize>(&mut self, value: &T, line: impl FnOnce() -> String) -> CliResult {
        if self.json {
            writeln!(self.out, "{}", serde_json::to_string_pretty(value).expect("serializable"))?;
        } else {
            writeln!(self.out, "{}", line())?;
        }
        Ok(())
    }
}

fn read_json(path: &PathBuf) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Parses and runs one invocation, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let Some(token) = cli.token.clone() else {
        let _ = writeln!(err, "error: an API key is required (--token or SCHEMA_TOKEN)");
        return 1;
    };
    let mut ctx = Ctx {
        client: Client::new(&cli.url, token),
        json: cli.json,
        out,
    };
    match dispatch(&mut ctx, cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if let CliError::Client(ClientError::Api(env)) = &e {
                for d in env.details.iter().flatten() {
                    let _ = writeln!(err, "  {d}");
                }
            }
            e.exit_code()
        }
    }
}

fn dispatch(ctx: &mut Ctx<'_>, command: Command) -> CliResult {
    match command {
        Command::SubmitTask { file } => {
            let req: TaskRequest = serde_json::from_value(read_json(&file)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))?;
            let rec = ctx.client.submit_task(&req)?;
            ctx.emit(&rec, || rec.uuid.to_string())
        }
        Command::SubmitWorkflow { file } => {
            let rec = ctx.client.submit_workflow(&read_json(&file)?)?;
            ctx.emit(&rec, || rec.uuid.to_string())
        }
        Command::List {
            kind,
            status,
            page,
            page_size,
        } => {
            let kinds: &[ExecutionKind] = match kind {
                KindArg::Task => &[ExecutionKind::Task],
                KindArg::Workflow => &[ExecutionKind::Workflow],
                KindArg::All => &[ExecutionKind::Task, ExecutionKind::Workflow],
            };
            let mut items = Vec::new();
            for &k in kinds {
                let p = ctx.client.list(k, status.as_deref(), page, page_size)?;
                if ctx.json {
                    ctx.emit(&p, String::new)?;
                }
                items.extend(p.items);
            }
            if !ctx.json {
                items.sort_by_key(|s| std::cmp::Reverse(s.submitted_at));
                for s in &items {
                    writeln!(ctx.out, "{}", summary_line(s))?;
                }
            }
            Ok(())
        }
        Command::Status {
            uuid,
            watch,
            interval_ms,
            timeout_secs,
        } => {
            let mut rec = ctx.client.find(uuid)?;
            if watch {
                let deadline = timeout_secs.map(|s| Instant::now() + Duration::from_secs(s));
                let mut last = rec.status;
                if !ctx.json {
                    writeln!(ctx.out, "{}", record_line(&rec))?;
                }
                while !rec.status.is_terminal() {
                    if deadline.is_some_and(|d| Instant::now() >= d) {
                        return Err(CliError::Usage(format!("{uuid} still {} after timeout", rec.status.as_str())));
                    }
                    std::thread::sleep(Duration::from_millis(interval_ms.max(10)));
                    rec = ctx.client.get(rec.kind, uuid)?;
                    if rec.status != last && !ctx.json {
                        writeln!(ctx.out, "{}", record_line(&rec))?;
                    }
                    last = rec.status;
                }
                if ctx.json {
                    ctx.emit(&rec, String::new)?;
                }
                return Ok(());
            }
            ctx.emit(&rec, || record_line(&rec))
        }
        Command::Logs { uuid, stderr } => {
            let rec = ctx.client.find(uuid)?;
            let channel = if stderr { LogChannel::Stderr } else { LogChannel::Stdout };
            let logs = ctx.client.logs(rec.kind, uuid, channel)?;
            if ctx.json {
                return ctx.emit(&logs, String::new);
            }
            for l in &logs {
                ctx.out.write_all(l.as_bytes())?;
            }
            Ok(())
        }
        Command::Cancel { uuid } => {
            let rec = ctx.client.find(uuid)?;
            let outcome = ctx.client.cancel(rec.kind, uuid)?;
            ctx.emit(&outcome, || {
                let mut l = record_line(&outcome.record);
                if outcome.already_terminal {
                    l.push_str("\t(already finished)");
                }
                l
            })
        }
        Command::Resubmit { uuid } => {
            let rec = ctx.client.find(uuid)?;
            let fresh = match &rec.definition {
                Definition::Task(t) => ctx.client.submit_task(&t.to_request())?,
                Definition::Workflow(w) => {
                    ctx.client.submit_workflow(&serde_json::to_value(w).expect("serializable"))?
                }
            };
            ctx.emit(&fresh, || fresh.uuid.to_string())
        }
        Command::Quotas => {
            let q = ctx.client.quotas()?;
            ctx.emit(&q, || {
                let e = &q.effective;
                let u = &q.current_usage;
                format!(
                    "context\t{}\nuser\t{}\nactive_executions\t{}/{}\ncpu_cores\t{}/{}\nram_gb\t{}/{}\ndisk_gb\t{}/{}",
                    q.context,
                    q.user,
                    u.active_executions,
                    limit(e.max_active_executions),
                    u.cpu_cores,
                    limit(e.max_cpu_cores),
                    u.ram_gb(),
                    limit(e.max_ram_gb),
                    u.disk_gb(),
                    limit(e.max_disk_gb)
                )
            })
        }
        Command::Files(cmd) => files(ctx, cmd),
        Command::Experiment(cmd) => experiment(ctx, cmd),
    }
}

fn files(ctx: &mut Ctx<'_>, cmd: FilesCommand) -> CliResult {
    match cmd {
        FilesCommand::Ls { prefix } => {
            let page = ctx.client.list_files(prefix.as_deref())?;
            ctx.emit(&page, || {
                page.items
                    .iter()
                    .map(|o| format!("{}\t{}\t{}", o.key, o.size_bytes, o.checksum))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        FilesCommand::Put { local, key } => {
            let data = fs::read(&local).map_err(|e| CliError::Usage(format!("{}: {e}", local.display())))?;
            ctx.client.upload(&key, &data)?;
            let meta = ctx.client.download_link(&key)?;
            ctx.emit(&meta, || format!("{key}\t{}", data.len()))
        }
        FilesCommand::Get { key, local } => {
            let data = ctx.client.download(&key)?;
            match local {
                Some(p) if p.as_os_str() != "-" => {
                    fs::write(&p, &data)?;
                    writeln!(ctx.out, "{}\t{}", p.display(), data.len())?;
                }
                _ => ctx.out.write_all(&data)?,
            }
            Ok(())
        }
        FilesCommand::Mv { from, to, overwrite } => {
            let obj = ctx.client.move_file(&from, &to, overwrite)?;
            ctx.emit(&obj, || format!("{}\t{}", obj.key, obj.size_bytes))
        }
        FilesCommand::Rm { key } => {
            let v = ctx.client.delete_file(&key)?;
            ctx.emit(&v, || format!("deleted\t{key}"))
        }
    }
}

fn experiment(ctx: &mut Ctx<'_>, cmd: ExperimentCommand) -> CliResult {
    match cmd {
        ExperimentCommand::Create {
            name,
            description,
            participants,
            tasks,
        } => {
            let mut exp = ctx.client.create_experiment(&NewExperiment {
                name,
                description,
                participants: participants.into_iter().collect(),
            })?;
            if !tasks.is_empty() {
                exp = ctx.client.assign(&exp.owner, &exp.name, &tasks)?;
            }
            ctx.emit(&exp, || format!("{}/{}", exp.owner, exp.name))
        }
        ExperimentCommand::List => {
            let page = ctx.client.list_experiments()?;
            ctx.emit(&page, || {
                page.items
                    .iter()
                    .map(|e| format!("{}/{}\t{}\t{}", e.owner, e.name, e.task_refs.len(), e.created_at.to_rfc3339()))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        ExperimentCommand::Show { owner, name } => {
            let view = ctx.client.get_experiment(&owner, &name)?;
            ctx.emit(&view, || {
                let e = &view.experiment;
                let a = &view.aggregates;
                let mut lines = vec![
                    format!("experiment\t{}/{}", e.owner, e.name),
                    format!("context\t{}", e.context_ref),
                    format!("participants\t{}", e.participants.iter().cloned().collect::<Vec<_>>().join(",")),
                    format!("executions\t{}", a.executions),
                ];
                for (status, n) in &a.status_counts {
                    lines.push(format!("count\t{}\t{n}", status.as_str()));
                }
                lines.push(format!("cpu_core_seconds\t{}", a.cpu_core_seconds));
                lines.push(format!("ram_gb_seconds\t{}", a.ram_gb_seconds));
                for t in &e.task_refs {
                    lines.push(format!("task\t{t}"));
                }
                lines.join("\n")
            })
        }
        ExperimentCommand::Assign { owner, name, tasks } => {
            let exp = ctx.client.assign(&owner, &name, &tasks)?;
            ctx.emit(&exp, || format!("{}/{}\t{}", exp.owner, exp.name, exp.task_refs.len()))
        }
        ExperimentCommand::Delete { owner, name } => {
            let v = ctx.client.delete_experiment(&owner, &name)?;
            ctx.emit(&v, || format!("deleted\t{owner}/{name}"))
        }
    }
}
