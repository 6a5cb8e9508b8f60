var agents = {};
agents.mozilla = function onMozilla() { return 1; };
agents.other = function onOther() { return 2; };
var ua = navigator.userAgent;
var key = "other";
if (ua == "Mozilla/5.0") { key = "mozilla"; }
agents[key]();
