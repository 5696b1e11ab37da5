#pragma once

#include <iostream>
#include <string>

#include <httplib.h>

#include "api_service.hpp"

namespace nervetrace::api {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
};

inline void install_routes(httplib::Server& server, ApiService& service, const ServerOptions& opts) {
  server.set_default_headers({{"Access-Control-Allow-Origin", opts.cors_origin},
                              {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const Response r = service.handle({req.method, req.path, req.body});
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get(".*", forward);
  server.Post(".*", forward);
  server.Delete(".*", forward);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

// Blocks until the server stops. Returns false if the address cannot be bound.
inline bool serve(ApiService& service, const ServerOptions& opts) {
  httplib::Server server;
  install_routes(server, service, opts);
  if (!server.bind_to_port(opts.host, opts.port)) {
    std::cerr << "cannot bind " << opts.host << ":" << opts.port << "\n";
    return false;
  }
  std::cerr << "listening on http://" << opts.host << ":" << opts.port << "\n";
  return server.listen_after_bind();
}

}  // namespace nervetrace::api
