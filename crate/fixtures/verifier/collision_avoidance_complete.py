import math
import time

import rclpy
from geometry_msgs.msg import Twist
from sensor_msgs.msg import LaserScan

from skillup.annotations import skill, skill_output, skill_parameter
from skillup.interfaces import SkillInterface
from skillup.ros2 import ROS2Skill


@skill(
    skill_interface=SkillInterface.REST,
    skill_iri="http://example.org/mmo700/skills#CollisionAvoidanceSkill",
    capability_iri="http://example.org/mmo700/capabilities#CollisionAvoidance",
    module_iri="http://example.org/mmo700#MMO700",
)
class CollisionAvoidanceSkill(ROS2Skill):
    def __init__(self):
        super().__init__("collision_avoidance_skill")
        self.vel_in = 0.0
        self.turn_rate_in = 0.0
        self.time_in = 0.0
        self.min_dist = 0.0
        self.vel_out = 0.0
        self.obs_dist = math.inf
        self.obs_degree = 0.0
        self.time_out = 0.0
        self.cmd_publisher = self.create_publisher(Twist, "/cmd_vel", 10)
        self.front_scan = self.create_subscription(LaserScan, "/lidar_1/scan", self.on_scan, 10)
        self.rear_scan = self.create_subscription(LaserScan, "/lidar_2/scan", self.on_scan, 10)

    @skill_parameter(is_required=True, name="vel_in", description="Forward velocity in m/s")
    def get_vel_in(self) -> float:
        return self.vel_in

    @skill_parameter(is_required=True, name="turn_rate_in", description="Angular velocity in rad/s")
    def get_turn_rate_in(self) -> float:
        return self.turn_rate_in

    @skill_parameter(is_required=True, name="min_dist", description="Minimum obstacle distance in m")
    def get_min_dist(self) -> float:
        return self.min_dist

    @skill_parameter(is_required=True, name="time_in", description="Duration of the motion in s")
    def get_time_in(self) -> float:
        return self.time_in

    @skill_output(is_required=True, name="vel_out", description="Applied forward velocity in m/s")
    def get_vel_out(self) -> float:
        return self.vel_out

    @skill_output(is_required=True, name="obs_dist", description="Closest obstacle distance in m")
    def get_obs_dist(self) -> float:
        return self.obs_dist

    @skill_output(is_required=True, name="obs_degree", description="Direction of the closest obstacle in degrees")
    def get_obs_degree(self) -> float:
        return self.obs_degree

    @skill_output(is_required=True, name="time_out", description="Time the robot moved in s")
    def get_time_out(self) -> float:
        return self.time_out

    def on_scan(self, msg: LaserScan):
        for i, r in enumerate(msg.ranges):
            if msg.range_min < r < self.obs_dist:
                self.obs_dist = r
                self.obs_degree = math.degrees(msg.angle_min + i * msg.angle_increment)

    def execute(self):
        twist = Twist()
        twist.linear.x = self.vel_in
        twist.angular.z = self.turn_rate_in
        start = time.monotonic()
        while rclpy.ok() and time.monotonic() - start < self.time_in:
            self.obs_dist = math.inf
            rclpy.spin_once(self, timeout_sec=0.05)
            if self.obs_dist < self.min_dist:
                break
            self.cmd_publisher.publish(twist)
        self.cmd_publisher.publish(Twist())
        self.vel_out = self.vel_in
        self.time_out = time.monotonic() - start

    def stopping(self):
        self.cmd_publisher.publish(Twist())
