#pragma once

#include <map>
#include <string>

// Before httplib: <resolv.h> defines a `_res` macro that breaks Eigen.
#include "dwiqc/app/service.hpp"

#include <httplib.h>

namespace dwiqc {

/// Routes every request under /api/ to the service.
inline void mount_review_service(httplib::Server& server, ReviewService& service)
{
    auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        const HttpResponse r = service.handle(req.method, req.path, query, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server.Get(R"(/api/.*)", forward);
    server.Post(R"(/api/.*)", forward);
    server.set_logger([](const httplib::Request&, const httplib::Response&) {});
}

/// Bound server; port 0 picks a free port.
class ReviewServer {
public:
    ReviewServer(ReviewService& service, const std::string& host, int port) : host_(host)
    {
        mount_review_service(server_, service);
        // SO_REUSEPORT (the httplib default) would let a second server share a busy port.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
        });
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
        } else {
            port_ = server_.bind_to_port(host, port) ? port : -1;
        }
        if (port_ <= 0) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    }

    int port() const { return port_; }
    const std::string& host() const { return host_; }
    void listen() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

private:
    httplib::Server server_;
    std::string host_;
    int port_ = -1;
};

}  // namespace dwiqc
