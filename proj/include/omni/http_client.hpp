#pragma once

// Live-mode service client. Kept in its own header so that fixture-based
// builds and tests never pay for the HTTP stack; only the CLI includes this.

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "omni/error.hpp"
#include "omni/forge.hpp"

namespace omni {

// Speaks JSON over HTTP: POST /v1/complete with {"role", "prompt"}, expects
// 200 and {"reply": "..."}. Anything else is a pipeline error, which the
// filter layer's retry loop handles.
class HttpClient : public ServiceClient {
public:
    HttpClient(std::string host, int port, std::string role)
        : host_(std::move(host)), port_(port), role_(std::move(role)) {}

    std::string role() const override { return role_; }
    std::string mode() const override { return "live"; }

    std::string complete(const std::string& prompt) override {
        httplib::Client client(host_, port_);
        ordered_json request;
        request["role"] = role_;
        request["prompt"] = prompt;
        auto res = client.Post("/v1/complete", request.dump(), "application/json");
        if (!res) {
            throw PipelineError("service " + role_ + " unreachable at " + host_ + ":" +
                                std::to_string(port_));
        }
        if (res->status != 200) {
            throw PipelineError("service " + role_ + " returned status " +
                                std::to_string(res->status));
        }
        ordered_json body = ordered_json::parse(res->body, nullptr, false);
        if (body.is_discarded() || !body.contains("reply")) {
            throw PipelineError("service " + role_ + " reply is not {\"reply\": ...} JSON");
        }
        return body["reply"].get<std::string>();
    }

private:
    std::string host_;
    int port_;
    std::string role_;
};

}  // namespace omni
