/*
 * Copyright 2026 The muscap Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "muscap/lm_ipc.hpp"

#include <array>
#include <bit>
#include <cerrno>
#include <csignal>
#include <streambuf>

#include <sys/wait.h>
#include <unistd.h>

#include "muscap/error.hpp"

namespace muscap::ipc {

namespace {

constexpr std::uint32_t kMaxFrame = 1u << 30;

void put_u32(std::string &buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

std::uint32_t get_u32(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// Buffered stream over a pair of pipe descriptors.
class FdBuf : public std::streambuf {
  public:
    FdBuf(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {
        setg(in_.data(), in_.data(), in_.data());
        setp(out_.data(), out_.data() + out_.size());
    }

  protected:
    int_type underflow() override {
        if (gptr() < egptr()) {
            return traits_type::to_int_type(*gptr());
        }
        ssize_t n;
        do {
            n = ::read(read_fd_, in_.data(), in_.size());
        } while (n < 0 && errno == EINTR);
        if (n <= 0) {
            return traits_type::eof();
        }
        setg(in_.data(), in_.data(), in_.data() + n);
        return traits_type::to_int_type(*gptr());
    }

    int_type overflow(int_type ch) override {
        if (sync() != 0) {
            return traits_type::eof();
        }
        if (!traits_type::eq_int_type(ch, traits_type::eof())) {
            *pptr() = traits_type::to_char_type(ch);
            pbump(1);
        }
        return traits_type::not_eof(ch);
    }

    int sync() override {
        const char *p = pbase();
        while (p < pptr()) {
            ssize_t n = ::write(write_fd_, p, static_cast<std::size_t>(pptr() - p));
            if (n < 0 && errno == EINTR) {
                continue;
            }
            if (n <= 0) {
                return -1;
            }
            p += n;
        }
        setp(out_.data(), out_.data() + out_.size());
        return 0;
    }

  private:
    int read_fd_;
    int write_fd_;
    std::array<char, 1 << 16> in_{};
    std::array<char, 1 << 16> out_{};
};

[[noreturn]] void rethrow_remote(const nlohmann::json &header) {
    std::string kind = header.value("kind", "error");
    std::string msg = "language model process: " + header.value("error", std::string("unknown error"));
    if (kind == "invalid_input") throw InvalidInput(msg);
    if (kind == "numerical") throw NumericalError(msg);
    if (kind == "shape") throw ShapeError(msg);
    throw Error(msg);
}

Message handle(const LanguageModel &model, const Message &req) {
    const std::string op = req.header.at("op").get<std::string>();
    Message rep;
    rep.header = {{"ok", true}};
    auto need_tensor = [&](std::size_t n) {
        if (req.tensors.size() < n) {
            throw InvalidInput(op + ": missing tensor frame");
        }
    };
    if (op == "info") {
        rep.header["dim"] = model.dim();
        rep.header["hash"] = model.parameter_hash();
    } else if (op == "tokenize") {
        rep.header["ids"] = model.tokenize(req.header.at("text").get<std::string>());
    } else if (op == "detokenize") {
        auto ids = req.header.at("ids").get<std::vector<int>>();
        rep.header["text"] = model.detokenize(ids);
    } else if (op == "embed_query") {
        TokenBlock block = model.embed_query(req.header.at("text").get<std::string>());
        rep.header["tensors"] = 1;
        rep.tensors.push_back(block.vectors);
    } else if (op == "caption_nll") {
        need_tensor(1);
        CaptionTarget target;
        target.text = req.header.value("text", std::string());
        target.token_ids = req.header.at("ids").get<std::vector<int>>();
        bool with_grad = req.header.value("with_grad", false);
        NllResult r = model.caption_nll(req.tensors[0], target, with_grad);
        rep.header["loss"] = r.loss;
        if (with_grad) {
            rep.header["tensors"] = 1;
            rep.tensors.push_back(r.prefix_grad);
        }
    } else if (op == "generate") {
        need_tensor(1);
        rep.header["text"] = model.generate(req.tensors[0], req.header.at("max_tokens").get<int>());
    } else {
        throw InvalidInput("unknown op '" + op + "'");
    }
    return rep;
}

} // namespace

void write_frame(std::ostream &out, std::string_view payload) {
    if (payload.size() > kMaxFrame) {
        throw InvalidInput("frame too large");
    }
    std::string len;
    put_u32(len, static_cast<std::uint32_t>(payload.size()));
    out.write(len.data(), 4);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw TransportError("write_frame: stream failure");
    }
}

std::optional<std::string> read_frame(std::istream &in) {
    unsigned char len[4];
    in.read(reinterpret_cast<char *>(len), 4);
    if (in.gcount() == 0 && in.eof()) {
        return std::nullopt;
    }
    if (in.gcount() != 4) {
        throw TransportError("read_frame: truncated length prefix");
    }
    std::uint32_t n = get_u32(len);
    if (n > kMaxFrame) {
        throw TransportError("read_frame: frame length " + std::to_string(n) + " exceeds limit");
    }
    std::string payload(n, '\0');
    in.read(payload.data(), n);
    if (static_cast<std::uint32_t>(in.gcount()) != n) {
        throw TransportError("read_frame: truncated payload");
    }
    return payload;
}

std::string encode_tensor(const Matrix &m) {
    std::string buf;
    buf.reserve(8 + 4 * static_cast<std::size_t>(m.size()));
    put_u32(buf, static_cast<std::uint32_t>(m.rows()));
    put_u32(buf, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
        }
    }
    return buf;
}

Matrix decode_tensor(std::string_view payload) {
    if (payload.size() < 8) {
        throw TransportError("decode_tensor: payload shorter than header");
    }
    auto p = reinterpret_cast<const unsigned char *>(payload.data());
    std::uint64_t rows = get_u32(p), cols = get_u32(p + 4);
    if (payload.size() != 8 + 4 * rows * cols) {
        throw TransportError("decode_tensor: payload size does not match " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    p += 8;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c, p += 4) {
            m(r, c) = std::bit_cast<float>(get_u32(p));
        }
    }
    return m;
}

void write_message(std::ostream &out, const Message &message) {
    nlohmann::json header = message.header;
    header["tensors"] = message.tensors.size();
    write_frame(out, header.dump());
    for (const auto &t : message.tensors) {
        write_frame(out, encode_tensor(t));
    }
    out.flush();
}

std::optional<Message> read_message(std::istream &in) {
    auto head = read_frame(in);
    if (!head) {
        return std::nullopt;
    }
    Message msg;
    try {
        msg.header = nlohmann::json::parse(*head);
    } catch (const nlohmann::json::exception &e) {
        throw TransportError(std::string("malformed message header: ") + e.what());
    }
    std::size_t count = msg.header.value("tensors", std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        auto frame = read_frame(in);
        if (!frame) {
            throw TransportError("stream ended inside a message");
        }
        msg.tensors.push_back(decode_tensor(*frame));
    }
    return msg;
}

void serve(const LanguageModel &model, std::istream &in, std::ostream &out) {
    while (true) {
        std::optional<Message> req;
        try {
            req = read_message(in);
        } catch (const TransportError &e) {
            write_message(out, {{{"ok", false}, {"kind", "transport"}, {"error", e.what()}}, {}});
            return;
        }
        if (!req) {
            return;
        }
        Message rep;
        try {
            rep = handle(model, *req);
        } catch (const InvalidInput &e) {
            rep = {{{"ok", false}, {"kind", "invalid_input"}, {"error", e.what()}}, {}};
        } catch (const NumericalError &e) {
            rep = {{{"ok", false}, {"kind", "numerical"}, {"error", e.what()}}, {}};
        } catch (const ShapeError &e) {
            rep = {{{"ok", false}, {"kind", "shape"}, {"error", e.what()}}, {}};
        } catch (const std::exception &e) {
            rep = {{{"ok", false}, {"kind", "error"}, {"error", e.what()}}, {}};
        }
        write_message(out, rep);
    }
}

// ---------------------------------------------------------------------------

struct SubprocessLanguageModel::Pipes {
    int to_child = -1;
    int from_child = -1;
    FdBuf buf;
    std::iostream stream;

    Pipes(int to, int from) : to_child(to), from_child(from), buf(from, to), stream(&buf) {}
};

SubprocessLanguageModel::SubprocessLanguageModel(std::vector<std::string> argv) {
    if (argv.empty()) {
        throw ConfigError("lm.command: empty command line");
    }
    // A dead child must surface as a failed write, not a fatal signal.
    std::signal(SIGPIPE, SIG_IGN);

    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) {
        throw TransportError("pipe() failed");
    }
    if (::pipe(out_pipe) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw TransportError("pipe() failed");
    }
    std::vector<char *> args;
    for (auto &a : argv) {
        args.push_back(a.data());
    }
    args.push_back(nullptr);

    pid_t pid = ::fork();
    if (pid < 0) {
        throw TransportError("fork() failed");
    }
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    pid_ = pid;
    pipes_ = new Pipes(in_pipe[1], out_pipe[0]);

    try {
        Message rep = call({{{"op", "info"}}, {}});
        dim_ = rep.header.at("dim").get<int>();
    } catch (...) {
        shutdown();
        throw;
    }
}

SubprocessLanguageModel::~SubprocessLanguageModel() { shutdown(); }

void SubprocessLanguageModel::shutdown() {
    if (pipes_) {
        ::close(pipes_->to_child);
        ::close(pipes_->from_child);
        delete pipes_;
        pipes_ = nullptr;
    }
    if (pid_ > 0) {
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

Message SubprocessLanguageModel::call(const Message &request) const {
    std::lock_guard lock(mutex_);
    write_message(pipes_->stream, request);
    if (!pipes_->stream) {
        throw TransportError("language model process is not accepting input");
    }
    auto reply = read_message(pipes_->stream);
    if (!reply) {
        throw TransportError("language model process closed its output");
    }
    if (!reply->header.value("ok", false)) {
        rethrow_remote(reply->header);
    }
    return std::move(*reply);
}

std::vector<int> SubprocessLanguageModel::tokenize(std::string_view text) const {
    return call({{{"op", "tokenize"}, {"text", std::string(text)}}, {}}).header.at("ids").get<std::vector<int>>();
}

std::string SubprocessLanguageModel::detokenize(std::span<const int> ids) const {
    std::vector<int> v(ids.begin(), ids.end());
    return call({{{"op", "detokenize"}, {"ids", v}}, {}}).header.at("text").get<std::string>();
}

TokenBlock SubprocessLanguageModel::embed_query(std::string_view text) const {
    Message rep = call({{{"op", "embed_query"}, {"text", std::string(text)}}, {}});
    if (rep.tensors.size() != 1) {
        throw TransportError("embed_query: reply carries no tensor");
    }
    return {rep.tensors[0], TokenKind::query};
}

NllResult SubprocessLanguageModel::caption_nll(const Matrix &prefix, const CaptionTarget &target,
                                              bool with_grad) const {
    if (!prefix.allFinite()) {
        throw NumericalError("caption_nll: prefix has non-finite entries");
    }
    Message req{{{"op", "caption_nll"}, {"text", target.text}, {"ids", target.token_ids}, {"with_grad", with_grad}},
                {prefix}};
    Message rep = call(req);
    NllResult r;
    r.loss = rep.header.at("loss").get<double>();
    if (with_grad) {
        if (rep.tensors.size() != 1) {
            throw TransportError("caption_nll: reply carries no gradient");
        }
        r.prefix_grad = rep.tensors[0];
    }
    return r;
}

std::string SubprocessLanguageModel::generate(const Matrix &prefix, int max_tokens) const {
    Message req{{{"op", "generate"}, {"max_tokens", max_tokens}}, {prefix}};
    return call(req).header.at("text").get<std::string>();
}

std::uint64_t SubprocessLanguageModel::parameter_hash() const {
    return call({{{"op", "info"}}, {}}).header.at("hash").get<std::uint64_t>();
}

} // namespace muscap::ipc
