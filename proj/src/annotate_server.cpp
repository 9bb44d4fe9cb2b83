#include "cytopipe/annotate_server.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "cytopipe/error.hpp"
#include "cytopipe/io.hpp"
#include "cytopipe/patchio.hpp"
#include "cytopipe/rng.hpp"

namespace cytopipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kLabelHeader = "cell_id,annotator_id,level";

bool valid_id(const std::string& s) {
    return !s.empty() && s.find_first_of(",\r\n") == std::string::npos;
}

void write_all(int fd, std::string_view data, const fs::path& path) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n != static_cast<ssize_t>(data.size())) {
        throw RuntimeFailure("write to " + path.string() + " failed: " + std::strerror(errno));
    }
}

}  // namespace

LabelStore::LabelStore(fs::path path) : path_(std::move(path)) {
    if (!path_.parent_path().empty()) fs::create_directories(path_.parent_path());
    std::string content;
    if (fs::exists(path_)) {
        const auto bytes = read_file_bytes(path_);
        content.assign(bytes.begin(), bytes.end());
        const std::size_t last_nl = content.rfind('\n');
        const std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
        if (keep != content.size()) {
            fs::resize_file(path_, keep);
            content.resize(keep);
        }
    }
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw RuntimeFailure("cannot open " + path_.string() + ": " + std::strerror(errno));
    if (content.empty()) {
        write_all(fd_, std::string(kLabelHeader) + "\n", path_);
        return;
    }
    std::istringstream in(content);
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kLabelHeader) {
        ::close(fd_);
        throw FormatError(path_.string() + ": expected header '" + std::string(kLabelHeader) + "'");
    }
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t a = line.find(',');
        const std::size_t b = a == std::string::npos ? a : line.find(',', a + 1);
        if (b == std::string::npos || line.find(',', b + 1) != std::string::npos) {
            ::close(fd_);
            throw FormatError(path_.string() + ": malformed row " + std::to_string(row + 1));
        }
        labels_[{line.substr(0, a), line.substr(a + 1, b - a - 1)}] =
            parse_int(line.substr(b + 1), path_, row);
        ++row;
    }
}

LabelStore::~LabelStore() {
    if (fd_ >= 0) ::close(fd_);
}

std::optional<int> LabelStore::get(const std::string& cell_id, const std::string& annotator) const {
    std::lock_guard lock(mutex_);
    const auto it = labels_.find({cell_id, annotator});
    if (it == labels_.end()) return std::nullopt;
    return it->second;
}

void LabelStore::append(const std::string& cell_id, const std::string& annotator, int level) {
    if (!valid_id(cell_id) || !valid_id(annotator)) {
        throw InvalidParameter("ids must be non-empty without commas or line breaks");
    }
    const std::string line = cell_id + "," + annotator + "," + std::to_string(level) + "\n";
    std::lock_guard lock(mutex_);
    write_all(fd_, line, path_);
    ::fsync(fd_);
    labels_[{cell_id, annotator}] = level;
}

std::size_t LabelStore::count_for(const std::string& annotator) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [key, level] : labels_) {
        if (key.second == annotator) ++n;
    }
    return n;
}

std::map<std::string, std::size_t> LabelStore::counts() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, std::size_t> out;
    for (const auto& [key, level] : labels_) ++out[key.second];
    return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kBuiltinPage = R"HTML(<!doctype html>
<html><head><meta charset="utf-8"><title>Focus annotation</title>
<style>
body{font-family:sans-serif;margin:1em}#strip img{width:96px;margin:2px;border:3px solid transparent;image-rendering:pixelated}
#strip img.sel{border-color:#d33}#big{width:320px;image-rendering:pixelated}
</style></head><body>
<p>Annotator <input id="who" value="expert1"> <button onclick="next()">Start</button> <span id="status"></span></p>
<div id="strip"></div><img id="big"><p><button onclick="submit()">Submit (Enter)</button></p>
<script>
let task=null,sel=null;
const $=id=>document.getElementById(id);
function show(i){sel=i;[...$('strip').children].forEach((c,j)=>c.className=j==i?'sel':'');$('big').src=task.levels[i];}
async function next(){
  const r=await fetch('/api/tasks/next?annotator='+encodeURIComponent($('who').value));
  if(r.status==204){$('strip').innerHTML='';$('status').textContent='all cells labelled';task=null;return;}
  task=await r.json();sel=null;$('strip').innerHTML='';
  task.levels.forEach((u,i)=>{const im=document.createElement('img');im.src=u;im.title='level '+i;im.onclick=()=>show(i);$('strip').appendChild(im);});
  $('status').textContent=task.progress.done+'/'+task.progress.total+' '+task.cell_id;
}
async function submit(overwrite){
  if(!task||sel===null)return;
  const r=await fetch('/api/labels'+(overwrite?'?overwrite=1':''),{method:'POST',headers:{'Content-Type':'application/json'},
    body:JSON.stringify({cell_id:task.cell_id,annotator_id:$('who').value,level:sel})});
  if(r.status==204)next();else if(r.status==409&&confirm('Replace existing label?'))submit(true);else $('status').textContent='error '+r.status;
}
document.addEventListener('keydown',e=>{if(!task)return;
  if(e.key>='0'&&e.key<='9'){const v=+e.key+(e.shiftKey?10:0);if(v<task.levels.length)show(v);}
  else if(e.key=='ArrowLeft')show(Math.max(0,(sel??0)-1));else if(e.key=='ArrowRight')show(Math.min(task.levels.length-1,(sel??-1)+1));
  else if(e.key=='Enter')submit();});
</script></body></html>
)HTML";

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

}  // namespace

struct AnnotationServer::Impl {
    httplib::Server http;
};

AnnotationServer::AnnotationServer(AnnotateConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
    const ArchiveInfo info = read_archive_info(config_.archive);
    if (!info.all_levels) {
        throw ValidationError("archive " + config_.archive.string() +
                              " holds only selected levels; re-run extract with --all-levels");
    }
    z_levels_ = info.z_levels;
    for (const ArchiveEntry& e : read_archive_index(config_.archive / "index.csv")) {
        if (task_index_.count(e.cell_id)) continue;
        task_index_[e.cell_id] = tasks_.size();
        tasks_.push_back({e.cell_id, e.slide_id});
    }
    store_ = std::make_unique<LabelStore>(config_.labels);

    auto& http = impl_->http;
    if (!http.set_mount_point("/patches", config_.archive.string())) {
        throw RuntimeFailure("cannot serve " + config_.archive.string());
    }
    if (!config_.static_dir.empty()) {
        if (!http.set_mount_point("/", config_.static_dir.string())) {
            throw ValidationError("static directory not found: " + config_.static_dir.string());
        }
    } else {
        http.Get("/", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(kBuiltinPage, "text/html; charset=utf-8");
        });
    }

    http.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string who = req.get_param_value("annotator");
        if (!valid_id(who)) return send_error(res, 400, "annotator parameter required");
        std::size_t done = 0;
        std::optional<std::size_t> next;
        for (std::size_t i : order_for(who)) {
            if (store_->get(tasks_[i].cell_id, who)) {
                ++done;
            } else if (!next) {
                next = i;
            }
        }
        if (!next) {
            res.status = 204;
            return;
        }
        const AnnotationTask& t = tasks_[*next];
        json levels = json::array();
        for (int z = 0; z < z_levels_; ++z) {
            levels.push_back("/patches/" + t.slide_id + "/" + t.cell_id + "_z" + std::to_string(z) +
                             ".png");
        }
        send_json(res, 200,
                  {{"cell_id", t.cell_id},
                   {"slide_id", t.slide_id},
                   {"levels", levels},
                   {"progress", {{"done", done}, {"total", tasks_.size()}}}});
    });

    http.Post("/api/labels", [this](const httplib::Request& req, httplib::Response& res) {
        json body;
        try {
            body = json::parse(req.body);
        } catch (const json::exception&) {
            return send_error(res, 400, "body must be JSON");
        }
        if (!body.is_object() || !body.contains("cell_id") || !body.contains("annotator_id") ||
            !body.contains("level") || !body["cell_id"].is_string() ||
            !body["annotator_id"].is_string() || !body["level"].is_number_integer()) {
            return send_error(res, 400, "expected {cell_id, annotator_id, level}");
        }
        const std::string cell = body["cell_id"];
        const std::string who = body["annotator_id"];
        const auto level = body["level"].get<std::int64_t>();
        if (!valid_id(who)) return send_error(res, 400, "invalid annotator_id");
        if (!task_index_.count(cell)) return send_error(res, 404, "unknown cell_id");
        if (level < 0 || level >= z_levels_) {
            return send_error(res, 400, "level must be in [0, " + std::to_string(z_levels_ - 1) + "]");
        }
        const bool overwrite = req.get_param_value("overwrite") == "1";
        if (!overwrite && store_->get(cell, who)) {
            return send_error(res, 409, "label exists; use ?overwrite=1");
        }
        try {
            store_->append(cell, who, static_cast<int>(level));
        } catch (const std::exception& e) {
            return send_error(res, 500, e.what());
        }
        res.status = 204;
    });

    http.Get("/api/progress", [this](const httplib::Request& req, httplib::Response& res) {
        const std::string who = req.get_param_value("annotator");
        if (!who.empty()) {
            return send_json(res, 200,
                             {{"annotator", who},
                              {"done", store_->count_for(who)},
                              {"total", tasks_.size()}});
        }
        json per = json::object();
        for (const auto& [id, n] : store_->counts()) per[id] = n;
        send_json(res, 200, {{"total", tasks_.size()}, {"annotators", per}});
    });
}

AnnotationServer::~AnnotationServer() { stop(); }

std::vector<std::size_t> AnnotationServer::order_for(const std::string& annotator) const {
    std::vector<std::size_t> order(tasks_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config_.seed, "annotate/" + annotator));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_below(rng, i)]);
    return order;
}

int AnnotationServer::bind() {
    auto& http = impl_->http;
    int port = config_.port;
    if (port == 0) {
        port = http.bind_to_any_port(config_.host);
        if (port < 0) throw RuntimeFailure("cannot bind " + config_.host);
    } else if (!http.bind_to_port(config_.host, port)) {
        throw RuntimeFailure("cannot bind " + config_.host + ":" + std::to_string(port));
    }
    return port;
}

void AnnotationServer::serve() { impl_->http.listen_after_bind(); }

void AnnotationServer::stop() {
    if (impl_) impl_->http.stop();
}

}  // namespace cytopipe
